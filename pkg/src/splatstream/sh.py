"""Real spherical harmonics through degree 3, evaluated along view directions.

Color of a Gaussian seen from direction d is clamp(SH(d) . coeffs + 0.5, 0, 1)
per channel.  The backward pass returns gradients for both the coefficients
and the (unnormalized) direction.
"""

import numpy as np

from .errors import InvalidParameter

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


def n_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(degree: int, dirs):
    """Basis values for unit directions, shape (N, 3) -> (N, (degree+1)^2)."""
    if not 0 <= degree <= 3:
        raise InvalidParameter(f"sh degree must be in 0..3, got {degree}")
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = dirs.shape[0]
    out = np.empty((n, n_coeffs(degree)))
    out[:, 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        out[:, 1] = -SH_C1 * y
        out[:, 2] = SH_C1 * z
        out[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[:, 4] = SH_C2[0] * xy
        out[:, 5] = SH_C2[1] * yz
        out[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[:, 7] = SH_C2[3] * xz
        out[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[:, 10] = SH_C3[1] * xy * z
        out[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[:, 14] = SH_C3[5] * z * (xx - yy)
        out[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(degree: int, dirs):
    """d(basis_k)/d(dir), shape (N, K, 3), for unit directions."""
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = dirs.shape[0]
    g = np.zeros((n, n_coeffs(degree), 3))
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        g[:, 1, 1] = -SH_C1
        g[:, 2, 2] = SH_C1
        g[:, 3, 0] = -SH_C1
    if degree >= 2:
        g[:, 4, 0] = SH_C2[0] * y
        g[:, 4, 1] = SH_C2[0] * x
        g[:, 5, 1] = SH_C2[1] * z
        g[:, 5, 2] = SH_C2[1] * y
        g[:, 6, 0] = SH_C2[2] * (-2.0 * x)
        g[:, 6, 1] = SH_C2[2] * (-2.0 * y)
        g[:, 6, 2] = SH_C2[2] * (4.0 * z)
        g[:, 7, 0] = SH_C2[3] * z
        g[:, 7, 2] = SH_C2[3] * x
        g[:, 8, 0] = SH_C2[4] * (2.0 * x)
        g[:, 8, 1] = SH_C2[4] * (-2.0 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g[:, 9, 0] = SH_C3[0] * 6.0 * x * y
        g[:, 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
        g[:, 10, 0] = SH_C3[1] * y * z
        g[:, 10, 1] = SH_C3[1] * x * z
        g[:, 10, 2] = SH_C3[1] * x * y
        g[:, 11, 0] = SH_C3[2] * (-2.0 * x * y)
        g[:, 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
        g[:, 11, 2] = SH_C3[2] * (8.0 * y * z)
        g[:, 12, 0] = SH_C3[3] * (-6.0 * x * z)
        g[:, 12, 1] = SH_C3[3] * (-6.0 * y * z)
        g[:, 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        g[:, 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
        g[:, 13, 1] = SH_C3[4] * (-2.0 * x * y)
        g[:, 13, 2] = SH_C3[4] * (8.0 * x * z)
        g[:, 14, 0] = SH_C3[5] * (2.0 * x * z)
        g[:, 14, 1] = SH_C3[5] * (-2.0 * y * z)
        g[:, 14, 2] = SH_C3[5] * (xx - yy)
        g[:, 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
        g[:, 15, 1] = SH_C3[6] * (-6.0 * x * y)
    return g


def eval_sh_colors(degree: int, coeffs, positions, cam_center):
    """Per-Gaussian RGB from SH coefficients and viewing direction.

    ``coeffs`` is (N, 3, K); directions are from the camera center to each
    Gaussian, normalized.  Returns (colors (N,3) clamped to [0,1],
    clamp_lo_mask (N,3), clamp_hi_mask (N,3), unit_dirs (N,3), radii (N,)).
    The masks let the backward pass zero gradients where the clamp is active.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    offs = positions - np.asarray(cam_center, dtype=np.float64).reshape(1, 3)
    r = np.linalg.norm(offs, axis=1)
    r_safe = np.maximum(r, 1e-12)
    dirs = offs / r_safe[:, None]
    basis = sh_basis(degree, dirs)
    raw = np.einsum("nck,nk->nc", coeffs, basis) + 0.5
    lo = raw < 0.0
    hi = raw > 1.0
    colors = np.clip(raw, 0.0, 1.0)
    return colors, lo, hi, dirs, r_safe


def eval_sh_colors_backward(degree: int, coeffs, dirs, radii, lo, hi, d_colors):
    """Gradients of clamped SH colors w.r.t. coefficients and world position.

    ``d_colors`` is (N, 3) upstream gradient; returns (d_coeffs (N,3,K),
    d_positions (N,3)).  Clamped channels pass no gradient.  The position
    gradient flows through the direction normalization
    d(dir)/d(pos) = (I - dir dir^T) / r.
    """
    d_colors = np.where(lo | hi, 0.0, d_colors)
    basis = sh_basis(degree, dirs)
    d_coeffs = d_colors[:, :, None] * basis[:, None, :]
    # chain into the direction: d_raw/d_dir = sum_k coeffs[:,c,k] * dbasis_k
    gbasis = sh_basis_grad(degree, dirs)
    d_dir = np.einsum("nc,nck,nkd->nd", d_colors, coeffs, gbasis)
    # normalize-through: project out the radial component and divide by r
    radial = np.einsum("nd,nd->n", d_dir, dirs)
    d_pos = (d_dir - radial[:, None] * dirs) / radii[:, None]
    return d_coeffs, d_pos

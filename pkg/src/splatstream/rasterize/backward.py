"""Backward pass: image/soft-count gradients down to field parameters.

Per-instance rows from the tile kernels are merged per visible splat (in
instance order, which is ascending tile order, so the result is independent
of worker count), then chained through the projection:

  color -> SH coefficients and view direction,
  conic -> 2D covariance -> camera covariance and Jacobian -> world
  covariance -> rotation quaternion and log-scales,
  2D mean and Jacobian -> camera point -> world position.

The soft-count path reaches only the opacity logits by construction; the
kernels fold it into the logit column directly.
"""

from dataclasses import dataclass

import numpy as np

from .. import sh as shmod
from ..errors import StaleFieldError
from ..field import GaussianField
from .forward import RenderOutput, run_tiled
from . import kernels
from .projection import FRUSTUM_EXPAND


@dataclass
class FieldGrads:
    """Gradients aligned with the field's parameter arrays."""

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    screen_norms: np.ndarray  # (N,) scaled screen-space mean gradient magnitude
    visible: np.ndarray  # (N,) bool, splats that reached the rasterizer


def backward(
    field: GaussianField,
    out: RenderOutput,
    d_image,
    d_soft=None,
    layout: str = "splat",
    workers: int = 1,
) -> FieldGrads:
    """Gradients of a scalar loss given d(loss)/d(image) and d(loss)/d(soft_count)."""
    if out.generation != field.generation:
        raise StaleFieldError(
            f"render saw generation {out.generation}, field is at {field.generation}"
        )
    if layout not in ("splat", "pixel"):
        raise ValueError(f"unknown backward layout {layout!r}")

    cam, splats = out.cam, out.splats
    h, w = cam.height, cam.width
    d_image = np.ascontiguousarray(d_image, dtype=np.float64).reshape(h, w, 3)
    if d_soft is None:
        d_soft = np.zeros((h, w))
    else:
        d_soft = np.ascontiguousarray(d_soft, dtype=np.float64).reshape(h, w)

    n = len(field)
    grads = FieldGrads(
        positions=np.zeros((n, 3)),
        rotations=np.zeros((n, 4)),
        log_scales=np.zeros((n, 3)),
        opacity_logits=np.zeros(n),
        sh=np.zeros_like(field.sh),
        screen_norms=np.zeros(n),
        visible=np.zeros(n, dtype=bool),
    )
    v = splats.n_visible
    if v == 0:
        return grads
    grads.visible[splats.gauss_index] = True

    inst_rows = np.zeros((splats.n_instances, 9))
    kernel = (
        kernels.backward_splat_range if layout == "splat" else kernels.backward_pixel_range
    )
    n_tiles = splats.tiles_x * splats.tiles_y
    run_tiled(
        kernel,
        n_tiles,
        workers,
        (
            splats.tiles_x,
            w,
            h,
            splats.tile_starts,
            splats.tile_ends,
            splats.inst_splat,
            splats.means2d,
            splats.conics,
            splats.opacities,
            splats.colors,
            out.bg,
            d_image,
            d_soft,
            out.t_final,
            out.n_walk,
            out.terminated,
            inst_rows,
        ),
    )

    # merge instances per visible splat; bincount accumulates in instance
    # order, so the sum order is fixed by the (tile, depth) sort
    per = np.empty((v, 9))
    for col in range(9):
        per[:, col] = np.bincount(splats.inst_splat, weights=inst_rows[:, col], minlength=v)
    d_color = per[:, 0:3]
    d_logit = per[:, 3]
    d_mu = per[:, 4:6]
    d_conic = per[:, 6:9]

    d_pos, d_quat, d_logscale, d_sh = _chain_to_params(field, cam, splats, d_color, d_mu, d_conic)

    gi = splats.gauss_index
    grads.positions[gi] = d_pos
    grads.rotations[gi] = d_quat
    grads.log_scales[gi] = d_logscale
    grads.opacity_logits[gi] = d_logit
    grads.sh[gi] = d_sh
    grads.screen_norms[gi] = np.linalg.norm(d_mu, axis=1) * (0.5 * max(w, h))
    return grads


def _chain_to_params(field, cam, splats, d_color, d_mu, d_conic):
    """Chain screen-space gradients to position, rotation, scale and SH."""
    gi = splats.gauss_index
    fx, fy = cam.fx, cam.fy
    rot = cam.rotation

    # colors: through the SH evaluation, including the view-direction path
    d_sh, d_pos_sh = shmod.eval_sh_colors_backward(
        field.sh_degree,
        field.sh[gi],
        splats.sh_dirs,
        splats.sh_radii,
        splats.sh_lo,
        splats.sh_hi,
        d_color,
    )

    # conic -> dilated 2D covariance: conic Q is the inverse, so
    # dL/dV2 = -Q G_Q Q with the off-diagonal gradient split across both slots
    qa, qb, qc = splats.conics[:, 0], splats.conics[:, 1], splats.conics[:, 2]
    q_mat = np.empty((gi.size, 2, 2))
    q_mat[:, 0, 0] = qa
    q_mat[:, 0, 1] = qb
    q_mat[:, 1, 0] = qb
    q_mat[:, 1, 1] = qc
    g_q = np.empty_like(q_mat)
    g_q[:, 0, 0] = d_conic[:, 0]
    g_q[:, 0, 1] = 0.5 * d_conic[:, 1]
    g_q[:, 1, 0] = 0.5 * d_conic[:, 1]
    g_q[:, 1, 1] = d_conic[:, 2]
    g_v2 = -np.einsum("nij,njk,nkl->nil", q_mat, g_q, q_mat)

    # V2 = J V3 J^T (dilation is additive, gradient passes through)
    p = splats.cam_points
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    mulx, muly = splats.clamp_mul[:, 0], splats.clamp_mul[:, 1]
    limx = FRUSTUM_EXPAND * (cam.width / (2.0 * fx))
    limy = FRUSTUM_EXPAND * (cam.height / (2.0 * fy))
    txc = np.clip(x / z, -limx, limx)
    tyc = np.clip(y / z, -limy, limy)
    jmat = np.zeros((gi.size, 2, 3))
    jmat[:, 0, 0] = fx / z
    jmat[:, 0, 2] = -fx * txc / z
    jmat[:, 1, 1] = fy / z
    jmat[:, 1, 2] = -fy * tyc / z

    v3 = splats.cov3d_cam
    g_j = 2.0 * np.einsum("nij,njk,nkl->nil", g_v2, jmat, v3)
    g_v3 = np.einsum("nji,njk,nkl->nil", jmat, g_v2, jmat)
    # Sigma_cam = R Sigma_world R^T, so the world gradient is R^T G R
    g_cov_world = np.einsum("ji,njk,kl->nil", rot, g_v3, rot)

    # Jacobian entries -> camera point (clamped coordinates gate the gradient)
    d_cam = np.zeros((gi.size, 3))
    z2 = z * z
    d_cam[:, 0] += g_j[:, 0, 2] * (-fx * mulx / z2)
    d_cam[:, 1] += g_j[:, 1, 2] * (-fy * muly / z2)
    d_cam[:, 2] += g_j[:, 0, 0] * (-fx / z2)
    d_cam[:, 2] += g_j[:, 1, 1] * (-fy / z2)
    d_cam[:, 2] += g_j[:, 0, 2] * fx * (mulx * x / z + txc) / z2
    d_cam[:, 2] += g_j[:, 1, 2] * fy * (muly * y / z + tyc) / z2

    # projected mean -> camera point
    d_cam[:, 0] += d_mu[:, 0] * fx / z
    d_cam[:, 1] += d_mu[:, 1] * fy / z
    d_cam[:, 2] += -d_mu[:, 0] * fx * x / z2 - d_mu[:, 1] * fy * y / z2

    # camera point -> world position (pose is constant)
    d_pos = d_cam @ rot + d_pos_sh

    # world covariance -> quaternion and log-scales via Sigma = M M^T, M = R S
    d_quat, d_logscale = _cov_to_rotation_scale(
        field.rotations[gi], field.log_scales[gi], g_cov_world
    )
    return d_pos, d_quat, d_logscale, d_sh


def _cov_to_rotation_scale(quats, log_scales, g_cov):
    """Backprop Sigma = (R S)(R S)^T to unnormalized quaternions and log-scales."""
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    qn = quats / norms
    w_, x_, y_, z_ = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    n = quats.shape[0]
    rot = np.empty((n, 3, 3))
    rot[:, 0, 0] = 1 - 2 * (y_ * y_ + z_ * z_)
    rot[:, 0, 1] = 2 * (x_ * y_ - w_ * z_)
    rot[:, 0, 2] = 2 * (x_ * z_ + w_ * y_)
    rot[:, 1, 0] = 2 * (x_ * y_ + w_ * z_)
    rot[:, 1, 1] = 1 - 2 * (x_ * x_ + z_ * z_)
    rot[:, 1, 2] = 2 * (y_ * z_ - w_ * x_)
    rot[:, 2, 0] = 2 * (x_ * z_ - w_ * y_)
    rot[:, 2, 1] = 2 * (y_ * z_ + w_ * x_)
    rot[:, 2, 2] = 1 - 2 * (x_ * x_ + y_ * y_)
    scales = np.exp(log_scales)
    m = rot * scales[:, None, :]

    g_sym = g_cov + np.swapaxes(g_cov, -1, -2)
    d_m = np.einsum("nij,njk->nik", g_sym, m)
    d_rot = d_m * scales[:, None, :]
    d_logscale = np.einsum("nij,nij->nj", d_m, rot) * scales

    zeros = np.zeros(n)
    # partials of R with respect to the normalized quaternion components
    dr_dw = 2.0 * np.stack(
        [zeros, -z_, y_, z_, zeros, -x_, -y_, x_, zeros], axis=1
    ).reshape(n, 3, 3)
    dr_dx = 2.0 * np.stack(
        [zeros, y_, z_, y_, -2 * x_, -w_, z_, w_, -2 * x_], axis=1
    ).reshape(n, 3, 3)
    dr_dy = 2.0 * np.stack(
        [-2 * y_, x_, w_, x_, zeros, z_, -w_, z_, -2 * y_], axis=1
    ).reshape(n, 3, 3)
    dr_dz = 2.0 * np.stack(
        [-2 * z_, -w_, x_, w_, -2 * z_, y_, x_, y_, zeros], axis=1
    ).reshape(n, 3, 3)
    d_qn = np.stack(
        [
            np.einsum("nij,nij->n", d_rot, dr_dw),
            np.einsum("nij,nij->n", d_rot, dr_dx),
            np.einsum("nij,nij->n", d_rot, dr_dy),
            np.einsum("nij,nij->n", d_rot, dr_dz),
        ],
        axis=1,
    )
    # through the normalization: d(q/|q|)/dq = (I - qn qn^T) / |q|
    radial = np.einsum("ni,ni->n", d_qn, qn)
    d_quat = (d_qn - radial[:, None] * qn) / norms
    return d_quat, d_logscale

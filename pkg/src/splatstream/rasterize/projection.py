"""Perspective projection of 3D Gaussians to screen-space splats and tile bins.

World covariance is pushed through the local affine (EWA) approximation of the
projection: cov2d = J W Sigma W^T J^T, with a 0.3-pixel isotropic dilation so
every splat covers at least a fraction of a pixel.  Splats are binned into
16x16 pixel tiles, duplicated per overlapped tile, and sorted by (tile, depth)
into CSR ranges for the per-tile blend walk.
"""

from dataclasses import dataclass

import numpy as np

from .. import sh as shmod
from ..camera import CameraFrame
from ..field import GaussianField

TILE = 16
ZNEAR = 0.2
COV2D_DILATION = 0.3
FRUSTUM_EXPAND = 1.3


@dataclass
class ProjectedSplats:
    """Screen-space splats plus everything the backward chain needs retained.

    Arrays are indexed by a compacted visible-splat index; ``gauss_index``
    maps back into the field.  ``tile_starts``/``tile_ends`` delimit, per
    tile, the slice of ``inst_splat`` holding depth-sorted splat indices.
    """

    gauss_index: np.ndarray  # (V,) field indices of visible splats
    means2d: np.ndarray  # (V, 2)
    conics: np.ndarray  # (V, 3) upper-triangular (a, b, c) of cov2d inverse
    depths: np.ndarray  # (V,)
    radii: np.ndarray  # (V,) pixel radius
    colors: np.ndarray  # (V, 3) clamped SH colors
    opacities: np.ndarray  # (V,)
    # retained intermediates for the backward chain
    cam_points: np.ndarray  # (V, 3) camera-space positions
    clamp_mul: np.ndarray  # (V, 2) 0/1 frustum-clamp gradient multipliers
    cov2d: np.ndarray  # (V, 3) dilated (a, b, c)
    cov3d_cam: np.ndarray  # (V, 3, 3) camera-space world covariance
    sh_dirs: np.ndarray  # (V, 3) unit view directions
    sh_radii: np.ndarray  # (V,) distances camera->gaussian
    sh_lo: np.ndarray  # (V, 3) color clamp masks
    sh_hi: np.ndarray  # (V, 3)
    # tile binning
    inst_splat: np.ndarray  # (M,) visible-splat index per instance, sorted
    tile_starts: np.ndarray  # (n_tiles,)
    tile_ends: np.ndarray  # (n_tiles,)
    tiles_x: int
    tiles_y: int

    @property
    def n_visible(self) -> int:
        return self.gauss_index.shape[0]

    @property
    def n_instances(self) -> int:
        return self.inst_splat.shape[0]


def tile_grid(width: int, height: int):
    return (width + TILE - 1) // TILE, (height + TILE - 1) // TILE


def project_field(field: GaussianField, cam: CameraFrame) -> ProjectedSplats:
    """Project every Gaussian; cull behind-camera, degenerate and off-screen ones."""
    rot, trans = cam.rotation, cam.translation
    pos = field.positions
    n = pos.shape[0]
    tiles_x, tiles_y = tile_grid(cam.width, cam.height)

    cam_pts = pos @ rot.T + trans
    in_front = cam_pts[:, 2] > ZNEAR
    idx = np.nonzero(in_front)[0]
    empty = _empty_projection(tiles_x, tiles_y)
    if idx.size == 0:
        return empty

    p = cam_pts[idx]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy

    # frustum-expanded clamp on the point entering the Jacobian; the clamp
    # multiplier zeroes the corresponding gradient path when active
    limx = FRUSTUM_EXPAND * (cam.width / (2.0 * cam.fx))
    limy = FRUSTUM_EXPAND * (cam.height / (2.0 * cam.fy))
    tx, ty = x / z, y / z
    mulx = ((tx > -limx) & (tx < limx)).astype(np.float64)
    muly = ((ty > -limy) & (ty < limy)).astype(np.float64)
    txc = np.clip(tx, -limx, limx)
    tyc = np.clip(ty, -limy, limy)

    cov3d_world = field.covariances()[idx]
    cov3d_cam = np.einsum("ij,njk,lk->nil", rot, cov3d_world, rot)

    fx_z = cam.fx / z
    fy_z = cam.fy / z
    j02 = -cam.fx * txc / z
    j12 = -cam.fy * tyc / z
    c00, c01, c02 = cov3d_cam[:, 0, 0], cov3d_cam[:, 0, 1], cov3d_cam[:, 0, 2]
    c11, c12, c22 = cov3d_cam[:, 1, 1], cov3d_cam[:, 1, 2], cov3d_cam[:, 2, 2]
    # rows of J V3: r0 = (fx/z, 0, j02) . V3 ; r1 = (0, fy/z, j12) . V3
    a = fx_z * (fx_z * c00 + j02 * c02) + j02 * (fx_z * c02 + j02 * c22) + COV2D_DILATION
    b = fx_z * (fy_z * c01 + j12 * c02) + j02 * (fy_z * c12 + j12 * c22)
    c = fy_z * (fy_z * c11 + j12 * c12) + j12 * (fy_z * c12 + j12 * c22) + COV2D_DILATION

    det = a * c - b * b
    ok = det > 0.0
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    conic_a = c * inv_det
    conic_b = -b * inv_det
    conic_c = a * inv_det

    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(0.1, mid * mid - det))
    radius = np.ceil(3.0 * np.sqrt(lam))

    tx0 = np.clip(((u - radius) / TILE).astype(np.int64), 0, tiles_x)
    ty0 = np.clip(((v - radius) / TILE).astype(np.int64), 0, tiles_y)
    tx1 = np.clip(((u + radius) / TILE).astype(np.int64) + 1, 0, tiles_x)
    ty1 = np.clip(((v + radius) / TILE).astype(np.int64) + 1, 0, tiles_y)
    n_tiles_touched = np.maximum(tx1 - tx0, 0) * np.maximum(ty1 - ty0, 0)
    ok &= (radius > 0) & (n_tiles_touched > 0)

    keep = np.nonzero(ok)[0]
    if keep.size == 0:
        return empty
    gauss_index = idx[keep]

    colors, lo, hi, dirs, r_safe = shmod.eval_sh_colors(
        field.sh_degree, field.sh[gauss_index], field.positions[gauss_index], cam.center
    )

    splats = ProjectedSplats(
        gauss_index=gauss_index,
        means2d=np.stack([u[keep], v[keep]], axis=1),
        conics=np.stack([conic_a[keep], conic_b[keep], conic_c[keep]], axis=1),
        depths=z[keep],
        radii=radius[keep],
        colors=colors,
        opacities=field.opacities()[gauss_index],
        cam_points=p[keep],
        clamp_mul=np.stack([mulx[keep], muly[keep]], axis=1),
        cov2d=np.stack([a[keep], b[keep], c[keep]], axis=1),
        cov3d_cam=cov3d_cam[keep],
        sh_dirs=dirs,
        sh_radii=r_safe,
        sh_lo=lo,
        sh_hi=hi,
        inst_splat=np.empty(0, dtype=np.int64),
        tile_starts=np.zeros(tiles_x * tiles_y, dtype=np.int64),
        tile_ends=np.zeros(tiles_x * tiles_y, dtype=np.int64),
        tiles_x=tiles_x,
        tiles_y=tiles_y,
    )
    _bin_tiles(splats, tx0[keep], ty0[keep], tx1[keep], ty1[keep])
    return splats


def _bin_tiles(splats: ProjectedSplats, tx0, ty0, tx1, ty1):
    """Duplicate each splat per overlapped tile and sort by (tile, depth)."""
    counts = (tx1 - tx0) * (ty1 - ty0)
    total = int(counts.sum())
    if total == 0:
        return
    splat_of = np.empty(total, dtype=np.int64)
    tile_of = np.empty(total, dtype=np.int64)
    offs = np.concatenate([[0], np.cumsum(counts)])
    tiles_x = splats.tiles_x
    for i in range(counts.shape[0]):
        o = offs[i]
        for ty in range(ty0[i], ty1[i]):
            row = ty * tiles_x
            for tx in range(tx0[i], tx1[i]):
                splat_of[o] = i
                tile_of[o] = row + tx
                o += 1

    order = np.lexsort((splats.depths[splat_of], tile_of))
    splats.inst_splat = splat_of[order]
    tile_sorted = tile_of[order]
    n_tiles = splats.tiles_x * splats.tiles_y
    firsts = np.searchsorted(tile_sorted, np.arange(n_tiles), side="left")
    lasts = np.searchsorted(tile_sorted, np.arange(n_tiles), side="right")
    splats.tile_starts = firsts.astype(np.int64)
    splats.tile_ends = lasts.astype(np.int64)


def _empty_projection(tiles_x, tiles_y) -> ProjectedSplats:
    z0 = np.empty(0, dtype=np.int64)
    f0 = np.empty(0)
    return ProjectedSplats(
        gauss_index=z0,
        means2d=np.empty((0, 2)),
        conics=np.empty((0, 3)),
        depths=f0,
        radii=f0,
        colors=np.empty((0, 3)),
        opacities=f0,
        cam_points=np.empty((0, 3)),
        clamp_mul=np.empty((0, 2)),
        cov2d=np.empty((0, 3)),
        cov3d_cam=np.empty((0, 3, 3)),
        sh_dirs=np.empty((0, 3)),
        sh_radii=f0,
        sh_lo=np.empty((0, 3), dtype=bool),
        sh_hi=np.empty((0, 3), dtype=bool),
        inst_splat=z0,
        tile_starts=np.zeros(tiles_x * tiles_y, dtype=np.int64),
        tile_ends=np.zeros(tiles_x * tiles_y, dtype=np.int64),
        tiles_x=tiles_x,
        tiles_y=tiles_y,
    )

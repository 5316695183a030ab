"""Forward render: project, then alpha-blend per tile front to back.

Besides the image, the render retains per-pixel walk state (final
transmittance, slots traversed, termination flag) and per-pixel counts of
blending splats, both the hard count and a sigmoid-relaxed soft count that
stays differentiable through the blend threshold.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from ..camera import CameraFrame
from ..errors import InvalidParameter
from ..field import GaussianField
from . import kernels
from .projection import ProjectedSplats, project_field


@dataclass
class RenderOutput:
    """Rendered image plus the retained state the backward pass replays."""

    image: np.ndarray  # (H, W, 3) in [0, 1]
    t_final: np.ndarray  # (H, W) transmittance after the last blend
    n_walk: np.ndarray  # (H, W) slots traversed per pixel
    terminated: np.ndarray  # (H, W) 1 where the walk hit the opacity floor
    hard_count: np.ndarray  # (H, W) splats blended per pixel
    soft_count: np.ndarray  # (H, W) differentiable relaxation of hard_count
    splats: ProjectedSplats
    cam: CameraFrame
    bg: np.ndarray
    generation: int  # field generation this render saw
    workers: int = dc_field(default=1, repr=False)

    @property
    def n_visible(self) -> int:
        return self.splats.n_visible


def tile_chunks(n_tiles: int, workers: int):
    """Split [0, n_tiles) into at most ``workers`` contiguous ranges."""
    w = max(1, min(workers, n_tiles)) if n_tiles else 0
    bounds = np.linspace(0, n_tiles, w + 1).astype(np.int64)
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(w) if bounds[i] < bounds[i + 1]]


def run_tiled(kernel, n_tiles: int, workers: int, args):
    """Run a per-tile-range kernel serially or across worker threads.

    Output rows live in disjoint per-tile ranges, so the result does not
    depend on the worker count.
    """
    chunks = tile_chunks(n_tiles, workers)
    if len(chunks) <= 1:
        for lo, hi in chunks:
            kernel(lo, hi, *args)
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        futs = [pool.submit(kernel, lo, hi, *args) for lo, hi in chunks]
        for f in futs:
            f.result()


def render(field: GaussianField, cam: CameraFrame, bg=(0.0, 0.0, 0.0), workers: int = 1):
    """Render the field from ``cam`` over a constant background color."""
    if workers < 1:
        raise InvalidParameter(f"workers must be >= 1, got {workers}")
    bg = np.asarray(bg, dtype=np.float64).reshape(3)
    splats = project_field(field, cam)
    h, w = cam.height, cam.width
    img = np.empty((h, w, 3))
    t_final = np.ones((h, w))
    n_walk = np.zeros((h, w), dtype=np.int64)
    terminated = np.zeros((h, w), dtype=np.uint8)
    hard_count = np.zeros((h, w), dtype=np.int64)
    soft_count = np.zeros((h, w))

    n_tiles = splats.tiles_x * splats.tiles_y
    args = (
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
        bg,
        img,
        t_final,
        n_walk,
        terminated,
        hard_count,
        soft_count,
    )
    run_tiled(kernels.forward_tile_range, n_tiles, workers, args)

    return RenderOutput(
        image=img,
        t_final=t_final,
        n_walk=n_walk,
        terminated=terminated,
        hard_count=hard_count,
        soft_count=soft_count,
        splats=splats,
        cam=cam,
        bg=bg,
        generation=field.generation,
        workers=workers,
    )

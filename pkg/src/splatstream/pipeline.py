"""Three-phase progressive training session.

Phase 1 bootstraps a field from the first batch of posed images.  Phase 2
consumes fly-in images one at a time: each event expands the field with
the image's novel sparse points, weights every registered image by its
overlap with the newcomer, and spends a fixed iteration budget split
between those key images and a uniformly sampled remainder.  Phase 3 runs
a final polish over all images, optionally after installing refined
poses.  All randomness flows from one generator so a seed fixes the run.
"""

import time
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .camera import CameraFrame
from .errors import InvalidParameter, UnknownImageError
from .field import (
    DensifyOptions,
    GaussianField,
    SpatialIndex,
    filter_new_points,
    median_nn_spacing,
)
from .losses import LossBreakdown, LossWeights, psnr, total_loss
from .optim import FieldOptimizer
from .overlap import MatchMatrix, weights_for_new_image
from .rasterize import backward, render
from .scheduler import LrSchedule, TrainingState, build_plan, lr_blended

ABLATIONS = frozenset(
    {
        "no_field_update",
        "no_image_weighting",
        "no_semiglobal",
        "no_load",
        "no_splat_parallel",
    }
)


@dataclass
class PhaseConfig:
    """Knobs for all three phases; defaults target full-scale scenes."""

    n0: int = 30
    initial_iters: int = 2000
    t_i: int = 200
    n_m: int = 10
    final_iters: int = 2000
    lr: LrSchedule = dc_field(default_factory=LrSchedule)
    loss_weights: LossWeights = dc_field(default_factory=LossWeights)
    densify: DensifyOptions = dc_field(default_factory=DensifyOptions)
    densify_interval: int = 100
    densify_stop_fraction: float = 0.8
    novelty_threshold: float = 0.0  # 0 means auto from point spacing
    novelty_refresh: int = 25
    sh_degree: int = 0
    init_opacity: float = 0.1
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n0 < 1:
            raise InvalidParameter(f"n0 must be >= 1, got {self.n0}")
        if self.initial_iters < 0 or self.final_iters < 0:
            raise InvalidParameter("iteration budgets must be >= 0")
        if self.t_i <= 0 or self.t_i % 2 != 0:
            raise InvalidParameter(f"t_i must be a positive even integer, got {self.t_i}")
        if self.n_m < 1:
            raise InvalidParameter(f"n_m must be >= 1, got {self.n_m}")
        if self.densify_interval < 1:
            raise InvalidParameter("densify_interval must be >= 1")
        if not 0.0 <= self.densify_stop_fraction <= 1.0:
            raise InvalidParameter("densify_stop_fraction must be in [0, 1]")
        if self.novelty_threshold < 0:
            raise InvalidParameter("novelty_threshold must be >= 0")
        if self.workers < 1:
            raise InvalidParameter("workers must be >= 1")


@dataclass
class EventReport:
    """What one fly-in event did, for the run log."""

    image_id: int
    n_candidates: int
    n_inserted: int
    field_before: int
    field_after: int
    psnr_before: float
    psnr_after: float
    loss_first: float
    loss_last: float
    seconds: float


class SessionState:
    """Everything a training session carries between phases and events."""

    def __init__(self, cfg: PhaseConfig, ablations=()):
        bad = set(ablations) - ABLATIONS
        if bad:
            raise InvalidParameter(f"unknown ablations: {sorted(bad)}")
        self.ablations = frozenset(ablations)
        self.phase = 1
        self.field = GaussianField(sh_degree=cfg.sh_degree)
        self.matrix = MatchMatrix()
        self.tstate = TrainingState()
        self.frames = {}
        self.rng = np.random.default_rng(cfg.seed)
        self.optimizer = None
        self.sparse_positions = np.zeros((0, 3))
        self.grad_accum = np.zeros(0)
        self.grad_count = np.zeros(0)
        self.scene_extent = 1.0
        self.densify_enabled = True
        self.effective_weights = (
            replace(cfg.loss_weights, load=0.0)
            if "no_load" in self.ablations
            else cfg.loss_weights
        )
        self._novelty = cfg.novelty_threshold
        self._events_since_refresh = 0
        self.events = []  # EventReport per fly-in
        self.timings = {"phase1": 0.0, "phase2": 0.0, "phase3": 0.0}

    @property
    def backward_layout(self) -> str:
        return "pixel" if "no_splat_parallel" in self.ablations else "splat"

    def register_frame(self, frame: CameraFrame, match_row=None):
        if frame.image_id in self.frames:
            raise InvalidParameter(f"image {frame.image_id} is already registered")
        self.matrix.register_image(frame.image_id, frame.feature_count)
        for other, raw in (match_row or {}).items():
            self.matrix.set_matches(frame.image_id, other, raw)
        self.tstate.register(frame.image_id)
        self.frames[frame.image_id] = frame
        self._update_extent()

    def _update_extent(self):
        centers = np.stack([f.center for f in self.frames.values()])
        radius = np.linalg.norm(centers - centers.mean(axis=0), axis=1).max()
        self.scene_extent = max(1.1 * float(radius), 1e-6)
        if self.optimizer is not None:
            self.optimizer.scene_extent = self.scene_extent

    def novelty_threshold(self, cfg: PhaseConfig) -> float:
        """Fixed when configured, else median point spacing, refreshed on a
        fly-in cadence so it tracks the growing cloud."""
        if cfg.novelty_threshold > 0:
            return cfg.novelty_threshold
        if self._events_since_refresh == 0 and len(self.sparse_positions) >= 2:
            self._novelty = median_nn_spacing(self.sparse_positions)
        self._events_since_refresh = (self._events_since_refresh + 1) % cfg.novelty_refresh
        return self._novelty

    def expand_field(self, points, cfg: PhaseConfig) -> int:
        """Insert the candidates that clear the novelty filter."""
        usable = [p for p in points if p.finite]
        threshold = self.novelty_threshold(cfg)
        if len(self.sparse_positions) and threshold > 0:
            index = SpatialIndex(self.sparse_positions)
            usable = filter_new_points(index, usable, threshold)
        if not usable:
            return 0
        inserted = self.field.insert_points(usable, init_opacity=cfg.init_opacity)
        if self.optimizer is not None:
            keep = np.ones(len(self.field) - inserted, dtype=bool)
            self.optimizer.sync(self.field, keep, inserted)
        self.grad_accum = np.concatenate([self.grad_accum, np.zeros(inserted)])
        self.grad_count = np.concatenate([self.grad_count, np.zeros(inserted)])
        self.sparse_positions = np.concatenate(
            [self.sparse_positions, np.stack([p.position for p in usable])]
        )
        return inserted

    def view_psnr(self, frame: CameraFrame, workers=1) -> float:
        out = render(self.field, frame, workers=workers)
        return psnr(out.image, frame.pixels)


def _train_one_iteration(state: SessionState, cfg: PhaseConfig, target_id) -> LossBreakdown:
    frame = state.frames[target_id]
    if frame.pixels is None:
        raise InvalidParameter(f"image {target_id} has no pixels to train against")
    rate = lr_blended(target_id, state.matrix, state.tstate, cfg.lr)
    out = render(state.field, frame, workers=cfg.workers)
    breakdown = total_loss(out.image, frame.pixels, out, state.effective_weights)
    grads = backward(
        state.field,
        out,
        breakdown.d_image,
        d_soft=breakdown.d_soft,
        layout=state.backward_layout,
        workers=cfg.workers,
    )
    state.optimizer.step(state.field, grads, position_rate=rate)
    state.grad_accum += grads.screen_norms
    state.grad_count += grads.visible
    state.tstate.record_iteration(target_id)
    if state.densify_enabled and state.tstate.global_iteration % cfg.densify_interval == 0:
        _densify(state, cfg)
    return breakdown


def _densify(state: SessionState, cfg: PhaseConfig):
    stats = state.grad_accum / np.maximum(state.grad_count, 1.0)
    opts = replace(cfg.densify, scene_extent=state.scene_extent)
    summary = state.field.densify_and_prune(stats, opts, state.rng)
    if summary.changed:
        state.optimizer.sync(state.field, summary.keep_mask, summary.n_added)
    state.grad_accum = np.zeros(len(state.field))
    state.grad_count = np.zeros(len(state.field))


def phase1_initialize(frames, points, cfg: PhaseConfig, matches=None, ablations=()) -> SessionState:
    """Seed the field from the bootstrap batch and train it in place.

    ``matches`` carries the pairwise raw match counts inside the batch so
    later events can weight against these images.
    """
    frames = list(frames)
    if len(frames) != cfg.n0:
        raise InvalidParameter(f"expected {cfg.n0} bootstrap frames, got {len(frames)}")
    points = list(points)
    if not points:
        raise InvalidParameter("initial sparse cloud is empty")

    state = SessionState(cfg, ablations)
    for frame in frames:
        state.register_frame(frame)
    for (i, j), raw in (matches or {}).items():
        state.matrix.set_matches(i, j, raw)

    usable = [p for p in points if p.finite]
    if not usable:
        raise InvalidParameter("initial sparse cloud has no finite points")
    state.field.insert_points(usable, init_opacity=cfg.init_opacity)
    state.sparse_positions = np.stack([p.position for p in usable])
    state.grad_accum = np.zeros(len(state.field))
    state.grad_count = np.zeros(len(state.field))
    state.optimizer = FieldOptimizer(state.field, scene_extent=state.scene_extent)

    t0 = time.perf_counter()
    order = [f.image_id for f in frames]
    for k in range(cfg.initial_iters):
        _train_one_iteration(state, cfg, order[k % len(order)])
    state.timings["phase1"] = time.perf_counter() - t0
    state.phase = 2
    return state


def phase2_step(state: SessionState, new_frame: CameraFrame, new_points, match_row, cfg: PhaseConfig) -> EventReport:
    """Ingest one fly-in image and run its T_I-iteration event."""
    if state.phase != 2:
        raise InvalidParameter(f"phase2_step called in phase {state.phase}")
    t0 = time.perf_counter()
    state.register_frame(new_frame, match_row)

    psnr_before = state.view_psnr(new_frame, workers=cfg.workers)
    field_before = len(state.field)
    inserted = 0
    if "no_field_update" not in state.ablations:
        inserted = state.expand_field(new_points, cfg)

    if "no_image_weighting" in state.ablations:
        weights = {i: 1.0 for i in state.matrix.image_ids}
    else:
        weights, _ = weights_for_new_image(state.matrix, new_frame.image_id)
    plan = build_plan(
        weights,
        state.tstate,
        cfg.t_i,
        cfg.n_m,
        state.rng,
        semiglobal="no_semiglobal" not in state.ablations,
    )

    loss_first = loss_last = float("nan")
    for k, target in enumerate(plan.entries):
        breakdown = _train_one_iteration(state, cfg, target)
        if k == 0:
            loss_first = breakdown.total
        loss_last = breakdown.total

    report = EventReport(
        image_id=new_frame.image_id,
        n_candidates=len(new_points),
        n_inserted=inserted,
        field_before=field_before,
        field_after=len(state.field),
        psnr_before=psnr_before,
        psnr_after=state.view_psnr(new_frame, workers=cfg.workers),
        loss_first=loss_first,
        loss_last=loss_last,
        seconds=time.perf_counter() - t0,
    )
    state.events.append(report)
    state.timings["phase2"] += report.seconds
    return report


def phase3_finalize(state: SessionState, refined_poses, cfg: PhaseConfig) -> dict:
    """Polish the full field; optionally swap in refined poses first."""
    if state.phase not in (2, 3):
        raise InvalidParameter(f"phase3_finalize called in phase {state.phase}")
    state.phase = 3
    for image_id, (rotation, translation) in (refined_poses or {}).items():
        if image_id not in state.frames:
            raise UnknownImageError(f"refined pose for unknown image {image_id}")
        state.frames[image_id].replace_pose(rotation, translation)
    if refined_poses:
        state._update_extent()

    train_frames = [f for f in state.frames.values() if f.pixels is not None]
    psnr_before = float(
        np.mean([state.view_psnr(f, workers=cfg.workers) for f in train_frames])
    )

    t0 = time.perf_counter()
    ids = list(state.frames)
    stop_densify = int(cfg.densify_stop_fraction * cfg.final_iters)
    for k in range(cfg.final_iters):
        state.densify_enabled = k < stop_densify
        target = ids[int(state.rng.integers(len(ids)))]
        _train_one_iteration(state, cfg, target)
    state.densify_enabled = True
    state.timings["phase3"] = time.perf_counter() - t0

    psnr_after = float(
        np.mean([state.view_psnr(f, workers=cfg.workers) for f in train_frames])
    )
    return {
        "iterations": cfg.final_iters,
        "train_psnr_before": psnr_before,
        "train_psnr_after": psnr_after,
        "field_size": len(state.field),
        "seconds": state.timings["phase3"],
    }

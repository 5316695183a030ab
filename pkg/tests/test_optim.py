"""Optimizer behavior: Adam math, field wiring, densify bookkeeping."""

import numpy as np
import pytest

from splatstream.errors import InvalidParameter, StaleFieldError
from splatstream.field import DensifyOptions, GaussianField, SparsePoint
from splatstream.optim import (
    AdamBuffer,
    FieldOptimizer,
    OPACITY_LR,
    SH_DC_LR,
    SH_REST_LR,
)
from splatstream.rasterize import FieldGrads


def small_field(n=4, seed=0):
    rng = np.random.default_rng(seed)
    fld = GaussianField(sh_degree=1)
    pts = rng.normal(size=(n, 3))
    cols = rng.uniform(0.2, 0.8, size=(n, 3))
    fld.insert_points([SparsePoint(p, c) for p, c in zip(pts, cols)])
    return fld


def zero_grads(fld):
    return FieldGrads(
        positions=np.zeros_like(fld.positions),
        rotations=np.zeros_like(fld.rotations),
        log_scales=np.zeros_like(fld.log_scales),
        opacity_logits=np.zeros_like(fld.opacity_logits),
        sh=np.zeros_like(fld.sh),
        screen_norms=np.zeros(len(fld)),
        visible=np.zeros(len(fld), dtype=bool),
    )


class TestAdamBuffer:
    def test_quadratic_toy_converges(self):
        # minimize (x - 3)^2 from 0 at the opacity rate
        x = np.array([0.0])
        buf = AdamBuffer.zeros_like(x)
        for _ in range(500):
            buf.apply(x, 2.0 * (x - 3.0), OPACITY_LR)
        assert abs(x[0] - 3.0) < 1e-2

    def test_zero_gradient_is_identity(self):
        x = np.array([1.5, -2.0])
        buf = AdamBuffer.zeros_like(x)
        for _ in range(10):
            buf.apply(x, np.zeros(2), 0.1)
        np.testing.assert_array_equal(x, [1.5, -2.0])

    def test_first_step_moves_by_lr(self):
        # bias correction makes the first update lr * sign(g)
        x = np.array([0.0])
        buf = AdamBuffer.zeros_like(x)
        buf.apply(x, np.array([7.3]), 0.01)
        assert x[0] == pytest.approx(-0.01, rel=1e-9)

    def test_remap_keeps_and_zeroes(self):
        buf = AdamBuffer(m=np.arange(4.0), v=np.arange(4.0) ** 2, step=3)
        buf.remap(np.array([True, False, True, False]), 2)
        np.testing.assert_array_equal(buf.m, [0.0, 2.0, 0.0, 0.0])
        np.testing.assert_array_equal(buf.v, [0.0, 4.0, 0.0, 0.0])
        assert buf.step == 3


class TestFieldOptimizer:
    def test_zero_grads_leave_field_unchanged(self):
        fld = small_field()
        before = fld.checksum()
        opt = FieldOptimizer(fld, scene_extent=2.0)
        for _ in range(5):
            opt.step(fld, zero_grads(fld), position_rate=1.6e-4)
        assert fld.checksum() == before

    def test_position_rate_scales_with_extent(self):
        moved = {}
        for extent in (1.0, 4.0):
            fld = small_field()
            start = fld.positions.copy()
            opt = FieldOptimizer(fld, scene_extent=extent)
            g = zero_grads(fld)
            g.positions[:] = 1.0
            opt.step(fld, g, position_rate=1e-3)
            moved[extent] = np.abs(fld.positions - start).max()
        assert moved[4.0] == pytest.approx(4.0 * moved[1.0], rel=1e-9)

    def test_sh_rest_learns_slower_than_dc(self):
        fld = small_field()
        opt = FieldOptimizer(fld)
        before = fld.sh.copy()
        g = zero_grads(fld)
        g.sh[:] = 1.0
        opt.step(fld, g, position_rate=0.0)
        delta = np.abs(fld.sh - before)
        assert delta[0, 0, 0] == pytest.approx(SH_DC_LR, rel=1e-9)
        assert delta[0, 0, 1] == pytest.approx(SH_REST_LR, rel=1e-9)

    def test_stale_field_rejected(self):
        fld = small_field()
        opt = FieldOptimizer(fld)
        rng = np.random.default_rng(1)
        stats = np.zeros(len(fld))
        summary = fld.densify_and_prune(stats, DensifyOptions(), rng)
        if not summary.changed:
            # force a shape change so the generation moves
            fld.insert_points([SparsePoint(np.array([9.0, 9.0, 9.0]), np.full(3, 0.5))])
        with pytest.raises(StaleFieldError):
            opt.step(fld, zero_grads(fld), position_rate=1e-4)

    def test_sync_after_densify(self):
        fld = small_field(n=6)
        opt = FieldOptimizer(fld)
        g = zero_grads(fld)
        g.positions[:] = 0.3
        opt.step(fld, g, position_rate=1e-3)
        m_before = opt.state.positions.m.copy()

        opts = DensifyOptions(prune_opacity=0.005, scene_extent=1.0)
        fld.opacity_logits[0] = -20.0  # prunes row 0
        stats = np.zeros(len(fld))
        summary = fld.densify_and_prune(stats, opts, np.random.default_rng(0))
        assert summary.changed
        opt.sync(fld, summary.keep_mask, summary.n_added)

        kept = opt.state.positions.m[: np.count_nonzero(summary.keep_mask)]
        np.testing.assert_array_equal(kept, m_before[summary.keep_mask])
        if summary.n_added:
            fresh = opt.state.positions.m[len(kept) :]
            np.testing.assert_array_equal(fresh, np.zeros_like(fresh))
        # field accepts steps again after the sync
        opt.step(fld, zero_grads(fld), position_rate=1e-4)

    def test_mismatched_grad_shape_rejected(self):
        fld = small_field()
        opt = FieldOptimizer(fld)
        g = zero_grads(fld)
        g.positions = g.positions[:-1]
        with pytest.raises(InvalidParameter):
            opt.step(fld, g, position_rate=1e-4)

    def test_bad_extent_rejected(self):
        with pytest.raises(InvalidParameter):
            FieldOptimizer(small_field(), scene_extent=0.0)

"""Renderer forward/backward: blend semantics, gradients, parallel layouts."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from splatstream.camera import CameraFrame, look_at
from splatstream.errors import StaleFieldError
from splatstream.field import GaussianField, SparsePoint, logit
from splatstream.rasterize import backward, project_field, render
from splatstream.rasterize.kernels import ALPHA_MIN, SOFT_TAU, T_EPS, TILE


def make_scene(n=12, seed=0, sh_degree=1):
    rng = np.random.default_rng(seed)
    field = GaussianField(sh_degree=sh_degree)
    pts = [
        SparsePoint(rng.uniform(-1.5, 1.5, 3) + [0.0, 0.0, 6.0], rng.uniform(0.2, 0.8, 3))
        for _ in range(n)
    ]
    field.insert_points(pts)
    field.rotations = rng.standard_normal((n, 4))
    field.log_scales = rng.uniform(-1.2, -0.2, (n, 3))
    field.opacity_logits = rng.uniform(-1.0, 2.0, n)
    field.sh += rng.standard_normal(field.sh.shape) * 0.05
    rot, tr = look_at(np.array([0.3, -0.2, 0.0]), np.array([0.0, 0.0, 6.0]))
    cam = CameraFrame(
        1, 48, 40, fx=50.0, fy=50.0, cx=24.0, cy=20.0, rotation=rot, translation=tr
    )
    return field, cam


def reference_blend(field, cam, bg):
    """Scalar-python re-walk of the tile lists; no compiled code involved."""
    splats = project_field(field, cam)
    bg = np.asarray(bg, dtype=np.float64)
    img = np.empty((cam.height, cam.width, 3))
    hard = np.zeros((cam.height, cam.width), dtype=int)
    soft = np.zeros((cam.height, cam.width))
    tf = np.ones((cam.height, cam.width))
    for yy in range(cam.height):
        for xx in range(cam.width):
            t = (yy // TILE) * splats.tiles_x + (xx // TILE)
            trans = 1.0
            c = np.zeros(3)
            for s in range(splats.tile_starts[t], splats.tile_ends[t]):
                g = splats.inst_splat[s]
                dx = xx - splats.means2d[g, 0]
                dy = yy - splats.means2d[g, 1]
                a_, b_, c_ = splats.conics[g]
                power = -0.5 * (a_ * dx * dx + c_ * dy * dy) - b_ * dx * dy
                if power > 0.0:
                    continue
                alpha = min(0.99, splats.opacities[g] * np.exp(power))
                soft[yy, xx] += 1.0 / (1.0 + np.exp(-(alpha - ALPHA_MIN) / SOFT_TAU))
                if alpha < ALPHA_MIN:
                    continue
                test_t = trans * (1.0 - alpha)
                if test_t < T_EPS:
                    break
                c += splats.colors[g] * alpha * trans
                hard[yy, xx] += 1
                trans = test_t
            img[yy, xx] = c + bg * trans
            tf[yy, xx] = trans
    return img, tf, hard, soft


class TestForward:
    def test_empty_field_renders_background(self):
        field = GaussianField()
        cam = CameraFrame(1, 20, 12, 15.0, 15.0, 10.0, 6.0, np.eye(3), np.zeros(3))
        out = render(field, cam, bg=(0.2, 0.4, 0.6))
        assert_allclose(out.image, np.broadcast_to([0.2, 0.4, 0.6], (12, 20, 3)))
        assert_allclose(out.t_final, 1.0)
        assert out.hard_count.sum() == 0

    def test_matches_python_reference(self):
        """Compiled walk agrees with a plain-python re-walk of the tile lists."""
        field, cam = make_scene(seed=3)
        bg = (0.1, 0.2, 0.3)
        out = render(field, cam, bg=bg)
        img, tf, hard, soft = reference_blend(field, cam, bg)
        assert_allclose(out.image, img, rtol=0, atol=1e-13)
        assert_allclose(out.t_final, tf, rtol=0, atol=1e-14)
        assert (out.hard_count == hard).all()
        assert_allclose(out.soft_count, soft, rtol=0, atol=1e-12)

    def test_single_splat_center_alpha(self):
        """At the projected center the blend weight is exactly the opacity."""
        field = GaussianField()
        field.insert_points([SparsePoint([0.0, 0.0, 5.0], [1.0, 1.0, 1.0])])
        field.opacity_logits[0] = logit(0.5)
        field.log_scales[:] = np.log(0.5)
        cam = CameraFrame(1, 33, 33, 40.0, 40.0, 16.0, 16.0, np.eye(3), np.zeros(3))
        out = render(field, cam, bg=(0.0, 0.0, 0.0))
        # dx = dy = 0 at pixel (16, 16): alpha = opacity, color = 1 * alpha
        assert_allclose(out.image[16, 16], 0.5, rtol=1e-12)
        assert out.hard_count[16, 16] == 1

    def test_behind_camera_culled(self):
        field = GaussianField()
        field.insert_points([SparsePoint([0.0, 0.0, -5.0], [1.0, 0.0, 0.0])])
        cam = CameraFrame(1, 16, 16, 20.0, 20.0, 8.0, 8.0, np.eye(3), np.zeros(3))
        out = render(field, cam)
        assert out.n_visible == 0
        assert_allclose(out.image, 0.0)

    def test_invariants_random_scene(self):
        field, cam = make_scene(seed=8, n=20)
        out = render(field, cam, bg=(0.3, 0.3, 0.3))
        assert np.isfinite(out.image).all()
        assert (out.image >= 0.0).all() and (out.image <= 1.0 + 1e-12).all()
        assert (out.t_final > 0.0).all() and (out.t_final <= 1.0).all()
        assert (out.hard_count <= out.n_walk).all()
        assert (out.soft_count >= 0.0).all()
        # soft count is a relaxation: within n_walk of the hard count
        assert (out.soft_count <= out.n_walk + 1e-12).all()

    def test_opaque_wall_terminates(self):
        """A stack of near-opaque splats drives transmittance to the floor."""
        field = GaussianField()
        pts = [SparsePoint([0.0, 0.0, 4.0 + 0.1 * i], [1.0, 1.0, 1.0]) for i in range(8)]
        field.insert_points(pts)
        field.opacity_logits[:] = 40.0  # activates to 1.0 within float precision
        field.log_scales[:] = np.log(2.0)
        cam = CameraFrame(1, 32, 32, 40.0, 40.0, 16.0, 16.0, np.eye(3), np.zeros(3))
        out = render(field, cam)
        center = out.t_final[16, 16]
        assert out.terminated[16, 16] == 1
        assert center < T_EPS / (1.0 - 0.99)
        # white wall over black background: color = 1 - T_final
        assert_allclose(out.image[16, 16], 1.0 - center, rtol=1e-12)

    def test_worker_counts_identical(self):
        field, cam = make_scene(seed=5)
        base = render(field, cam, bg=(0.1, 0.0, 0.2), workers=1)
        for w in (2, 4):
            other = render(field, cam, bg=(0.1, 0.0, 0.2), workers=w)
            assert (base.image == other.image).all()
            assert (base.t_final == other.t_final).all()

    def test_depth_order_front_wins(self):
        """Of two coincident-screen splats the nearer one dominates the pixel."""
        field = GaussianField()
        field.insert_points(
            [SparsePoint([0.0, 0.0, 3.0], [1.0, 0.0, 0.0]), SparsePoint([0.0, 0.0, 6.0], [0.0, 1.0, 0.0])]
        )
        field.opacity_logits[:] = logit(0.9)
        field.log_scales[:] = np.log(0.4)
        cam = CameraFrame(1, 32, 32, 40.0, 40.0, 16.0, 16.0, np.eye(3), np.zeros(3))
        out = render(field, cam)
        px = out.image[16, 16]
        assert px[0] > 0.85 and px[1] < 0.12


class TestBackward:
    def test_gradients_match_finite_differences(self):
        """Central differences over every parameter group, image loss only."""
        field, cam = make_scene(seed=0)
        rng = np.random.default_rng(1)
        target = rng.uniform(size=(cam.height, cam.width, 3))

        def loss():
            out = render(field, cam, bg=(0.1, 0.2, 0.3))
            return float(((out.image - target) ** 2).sum()), out

        base, out = loss()
        g = backward(field, out, 2.0 * (out.image - target), layout="pixel")
        eps = 1e-5
        checked = 0
        for arr, garr in (
            (field.positions, g.positions),
            (field.rotations, g.rotations),
            (field.log_scales, g.log_scales),
            (field.opacity_logits.reshape(-1, 1), g.opacity_logits.reshape(-1, 1)),
            (field.sh, g.sh),
        ):
            flat, gflat = arr.reshape(-1), garr.reshape(-1)
            idxs = rng.choice(flat.size, size=min(10, flat.size), replace=False)
            for i in idxs:
                old = flat[i]
                flat[i] = old + eps
                lp, _ = loss()
                flat[i] = old - eps
                lm, _ = loss()
                flat[i] = old
                fd = (lp - lm) / (2 * eps)
                assert gflat[i] == pytest.approx(fd, rel=2e-3, abs=1e-7)
                checked += 1
        assert checked >= 40

    def test_soft_count_gradient_reaches_only_logits(self):
        """The soft-count path moves opacity logits and nothing else."""
        field, cam = make_scene(seed=2)
        out = render(field, cam)
        rng = np.random.default_rng(3)
        wsoft = rng.standard_normal((cam.height, cam.width))
        g = backward(field, out, np.zeros((cam.height, cam.width, 3)), d_soft=wsoft)
        assert np.abs(g.opacity_logits).max() > 0.0
        assert_allclose(g.positions, 0.0, atol=0.0)
        assert_allclose(g.rotations, 0.0, atol=0.0)
        assert_allclose(g.log_scales, 0.0, atol=0.0)
        assert_allclose(g.sh, 0.0, atol=0.0)

    def test_soft_logit_gradient_matches_fd(self):
        field, cam = make_scene(seed=6)
        rng = np.random.default_rng(4)
        wsoft = rng.standard_normal((cam.height, cam.width)) * 0.1

        def loss():
            out = render(field, cam)
            return float((wsoft * out.soft_count).sum()), out

        base, out = loss()
        g = backward(field, out, np.zeros((cam.height, cam.width, 3)), d_soft=wsoft)
        eps = 1e-6
        for i in range(len(field)):
            old = field.opacity_logits[i]
            field.opacity_logits[i] = old + eps
            lp, _ = loss()
            field.opacity_logits[i] = old - eps
            lm, _ = loss()
            field.opacity_logits[i] = old
            fd = (lp - lm) / (2 * eps)
            assert g.opacity_logits[i] == pytest.approx(fd, rel=1e-4, abs=1e-10)

    def test_layouts_agree(self):
        """Splat-major and pixel-major accumulate the same gradients."""
        field, cam = make_scene(seed=9, n=18)
        out = render(field, cam, bg=(0.2, 0.1, 0.0))
        rng = np.random.default_rng(5)
        d_img = rng.standard_normal((cam.height, cam.width, 3))
        d_soft = rng.standard_normal((cam.height, cam.width)) * 0.05
        gp = backward(field, out, d_img, d_soft=d_soft, layout="pixel")
        gs = backward(field, out, d_img, d_soft=d_soft, layout="splat")
        for name in ("positions", "rotations", "log_scales", "opacity_logits", "sh"):
            a, b = getattr(gp, name), getattr(gs, name)
            scale = np.abs(a).max()
            assert np.abs(a - b).max() <= 1e-6 * max(scale, 1e-12)

    def test_splat_layout_worker_invariant(self):
        """Gradient bits do not depend on the worker count."""
        field, cam = make_scene(seed=11, n=25)
        out = render(field, cam)
        rng = np.random.default_rng(6)
        d_img = rng.standard_normal((cam.height, cam.width, 3))
        base = backward(field, out, d_img, layout="splat", workers=1)
        for w in (2, 4):
            g = backward(field, out, d_img, layout="splat", workers=w)
            for name in ("positions", "rotations", "log_scales", "opacity_logits", "sh"):
                assert (getattr(base, name) == getattr(g, name)).all()

    def test_stale_render_rejected(self):
        field, cam = make_scene(seed=1)
        out = render(field, cam)
        field.insert_points([SparsePoint([0.0, 0.0, 5.0], [0.5, 0.5, 0.5])])
        with pytest.raises(StaleFieldError):
            backward(field, out, np.zeros((cam.height, cam.width, 3)))

    def test_visibility_and_screen_norms(self):
        field, cam = make_scene(seed=4)
        # push one gaussian behind the camera
        field.positions[0] = [0.0, 0.0, -10.0]
        out = render(field, cam)
        rng = np.random.default_rng(8)
        g = backward(field, out, rng.standard_normal((cam.height, cam.width, 3)))
        assert not g.visible[0]
        assert g.visible[1:].all()
        assert g.screen_norms[0] == 0.0
        assert (g.screen_norms[1:] >= 0.0).all()


class TestProjection:
    def test_radius_shrinks_with_distance(self):
        cam = CameraFrame(1, 64, 64, 60.0, 60.0, 32.0, 32.0, np.eye(3), np.zeros(3))
        field = GaussianField()
        field.insert_points(
            [SparsePoint([0.0, 0.0, 3.0], [0.5] * 3), SparsePoint([0.0, 0.0, 12.0], [0.5] * 3)]
        )
        field.log_scales[:] = np.log(0.3)
        sp = project_field(field, cam)
        near = sp.radii[sp.gauss_index == 0][0]
        far = sp.radii[sp.gauss_index == 1][0]
        assert near > far

    def test_tile_lists_cover_center(self):
        field = GaussianField()
        field.insert_points([SparsePoint([0.0, 0.0, 5.0], [0.5] * 3)])
        field.log_scales[:] = np.log(0.5)
        cam = CameraFrame(1, 64, 64, 60.0, 60.0, 32.0, 32.0, np.eye(3), np.zeros(3))
        sp = project_field(field, cam)
        t = (32 // TILE) * sp.tiles_x + (32 // TILE)
        assert sp.tile_ends[t] > sp.tile_starts[t]

    def test_instances_sorted_by_depth_within_tile(self):
        field, cam = make_scene(seed=13, n=30)
        sp = project_field(field, cam)
        for t in range(sp.tiles_x * sp.tiles_y):
            d = sp.depths[sp.inst_splat[sp.tile_starts[t] : sp.tile_ends[t]]]
            assert (np.diff(d) >= 0.0).all()

"""Procedural blob scenes with exact ground truth.

Generates a strip of colored Gaussian blobs, a sweep of cameras whose
views overlap chain-wise, ground-truth renders from the package's own
forward pass, and a sparse-point/track structure shaped like a text
reconstruction.  Scenes can be used in memory or written to disk in the
reconstruction text format plus PPM images.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import CameraFrame, look_at
from .errors import InvalidParameter
from .field import GaussianField, SparsePoint, logit, rgb_to_dc
from .io.images import encode_ppm
from .io.replay import SceneBundle
from .rasterize import render

ZNEAR = 0.2


def rotmat_to_quat(rot):
    """Unit quaternion (w, x, y, z) from a rotation matrix."""
    r = np.asarray(rot, dtype=np.float64)
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] >= r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


@dataclass
class SyntheticScene:
    """Ground-truth field plus the reconstruction-shaped view of it."""

    gt_field: GaussianField
    frames: dict  # image_id -> CameraFrame with pixels
    points: dict  # point_id -> SparsePoint
    image_points: dict  # image_id -> [point_id, ...]
    matches: dict  # (lo, hi) -> shared-track count
    order: list  # image ids in capture order


def _project(frame: CameraFrame, p):
    cam = frame.rotation @ p + frame.translation
    if cam[2] <= ZNEAR:
        return None
    u = frame.fx * cam[0] / cam[2] + frame.cx
    v = frame.fy * cam[1] / cam[2] + frame.cy
    if 0.0 <= u < frame.width and 0.0 <= v < frame.height:
        return float(u), float(v)
    return None


def make_scene(
    seed=0,
    n_views=24,
    n_blobs=None,
    width=64,
    height=64,
    focal=80.0,
    points_per_blob=(4, 7),
    workers=1,
) -> SyntheticScene:
    """Build a strip scene: blobs near z=5, cameras sweeping x at z=0."""
    rng = np.random.default_rng(seed)
    if n_blobs is None:
        n_blobs = int(rng.integers(30, 61))
    if n_views < 2:
        raise InvalidParameter(f"need at least 2 views, got {n_views}")

    # blob field sized to tile the swept frustum: views should be wall,
    # not void, so per-pixel splat counts stay roughly uniform
    centers = np.stack(
        [
            rng.uniform(-3.0, 3.0, size=n_blobs),
            rng.uniform(-1.5, 1.5, size=n_blobs),
            rng.uniform(4.6, 5.4, size=n_blobs),
        ],
        axis=1,
    )
    sigmas = rng.uniform(0.14, 0.30, size=(n_blobs, 3))
    colors = rng.uniform(0.25, 0.95, size=(n_blobs, 3))
    opacities = rng.uniform(0.88, 0.99, size=n_blobs)
    quats = rng.normal(size=(n_blobs, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)

    gt = GaussianField(sh_degree=0)
    gt._append(
        positions=centers.copy(),
        rotations=quats,
        log_scales=np.log(sigmas),
        opacity_logits=logit(opacities),
        sh=rgb_to_dc(colors)[:, :, None],
    )

    frames = {}
    order = []
    xs = np.linspace(-1.6, 1.6, n_views)
    for k in range(n_views):
        eye = np.array([xs[k], 0.15 * np.sin(1.7 * k), 0.0])
        target = np.array([0.8 * xs[k], 0.0, 5.0])
        rotation, translation = look_at(eye, target)
        image_id = k + 1
        frame = CameraFrame(
            image_id=image_id,
            width=width,
            height=height,
            fx=focal,
            fy=focal,
            cx=width / 2.0,
            cy=height / 2.0,
            rotation=rotation,
            translation=translation,
            name=f"view_{k:03d}.ppm",
        )
        frame.attach_pixels(render(gt, frame, workers=workers).image)
        frames[image_id] = frame
        order.append(image_id)

    # sparse points sampled around blob centers, colored like their blob;
    # jitter well inside the blob so nearest-neighbor spacing (and with it
    # the inserted splat scale) stays below the blob footprint
    points = {}
    pid = 1
    lo, hi = points_per_blob
    for b in range(n_blobs):
        for _ in range(int(rng.integers(lo, hi + 1))):
            pos = centers[b] + rng.normal(size=3) * 0.35 * sigmas[b]
            col = np.clip(colors[b] + rng.normal(scale=0.02, size=3), 0.0, 1.0)
            points[pid] = SparsePoint(position=pos, color=col)
            pid += 1

    image_points = {i: [] for i in order}
    tracks = {}
    for point_id, point in points.items():
        seen = []
        for image_id in order:
            if _project(frames[image_id], point.position) is not None:
                seen.append(image_id)
                image_points[image_id].append(point_id)
        tracks[point_id] = seen

    matches = {}
    for seen in tracks.values():
        for a in range(len(seen)):
            for b in range(a + 1, len(seen)):
                key = (seen[a], seen[b])
                matches[key] = matches.get(key, 0) + 1

    for image_id in order:
        frames[image_id].feature_count = len(image_points[image_id])

    return SyntheticScene(
        gt_field=gt,
        frames=frames,
        points=points,
        image_points=image_points,
        matches=matches,
        order=order,
    )


def to_bundle(scene: SyntheticScene, train_ids=None):
    """Restrict a scene to a replay set; returns (bundle, holdout frames).

    Points and match records referencing held-out images are dropped so
    the bundle never leaks ground truth from views it will not see.
    """
    if train_ids is None:
        train_ids = list(scene.order)
    train = list(train_ids)
    unknown = [i for i in train if i not in scene.frames]
    if unknown:
        raise InvalidParameter(f"unknown train ids: {unknown}")
    keep = set(train)
    frames = {i: scene.frames[i] for i in train}
    image_points = {i: list(scene.image_points[i]) for i in train}
    kept_points = {pid for ids in image_points.values() for pid in ids}
    points = {pid: scene.points[pid] for pid in sorted(kept_points)}
    matches = {
        (a, b): n for (a, b), n in scene.matches.items() if a in keep and b in keep
    }
    bundle = SceneBundle(
        frames=frames,
        points=points,
        image_points=image_points,
        matches=matches,
        replay_order=train,
    )
    holdout = [scene.frames[i] for i in scene.order if i not in keep]
    return bundle, holdout


def default_split(scene: SyntheticScene, n_holdout=4):
    """Hold out every (n/k)-th view, skipping the strip endpoints."""
    n = len(scene.order)
    if not 0 < n_holdout < n:
        raise InvalidParameter(f"cannot hold out {n_holdout} of {n} views")
    stride = n // (n_holdout + 1)
    holdout_ids = [scene.order[(k + 1) * stride] for k in range(n_holdout)]
    train_ids = [i for i in scene.order if i not in set(holdout_ids)]
    return train_ids, holdout_ids


def write_scene(scene: SyntheticScene, out_dir, n_holdout=4) -> None:
    """Write reconstruction text files, PPM images, and the split lists."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "sparse").mkdir(parents=True, exist_ok=True)

    # one pinhole camera per image keeps the format exercise honest
    with open(out / "sparse" / "cameras.txt", "w", encoding="utf-8") as fh:
        fh.write("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS\n")
        for image_id in scene.order:
            f = scene.frames[image_id]
            fh.write(
                f"{image_id} PINHOLE {f.width} {f.height} "
                f"{f.fx!r} {f.fy!r} {f.cx!r} {f.cy!r}\n"
            )

    # observation lists first so points3D can reference observation slots
    obs = {}
    for image_id in scene.order:
        frame = scene.frames[image_id]
        rows = []
        for pid in scene.image_points[image_id]:
            uv = _project(frame, scene.points[pid].position)
            if uv is None:
                continue
            rows.append((uv[0], uv[1], pid))
        obs[image_id] = rows

    with open(out / "sparse" / "images.txt", "w", encoding="utf-8") as fh:
        fh.write("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n")
        fh.write("# POINTS2D as (X, Y, POINT3D_ID)\n")
        for image_id in scene.order:
            f = scene.frames[image_id]
            q = rotmat_to_quat(f.rotation)
            t = f.translation
            qv = [float(x) for x in q]
            tv = [float(x) for x in t]
            fh.write(
                f"{image_id} {qv[0]!r} {qv[1]!r} {qv[2]!r} {qv[3]!r} "
                f"{tv[0]!r} {tv[1]!r} {tv[2]!r} {image_id} {f.name}\n"
            )
            fh.write(" ".join(f"{u!r} {v!r} {pid}" for u, v, pid in obs[image_id]) + "\n")

    slot = {
        (image_id, pid): k
        for image_id, rows in obs.items()
        for k, (_, _, pid) in enumerate(rows)
    }
    with open(out / "sparse" / "points3D.txt", "w", encoding="utf-8") as fh:
        fh.write("# POINT3D_ID X Y Z R G B ERROR TRACK\n")
        for pid in sorted(scene.points):
            p = scene.points[pid]
            rgb = np.rint(p.color * 255.0).astype(int)
            xyz = [float(x) for x in p.position]
            track = [
                f"{image_id} {slot[(image_id, pid)]}"
                for image_id in scene.order
                if (image_id, pid) in slot
            ]
            fh.write(
                f"{pid} {xyz[0]!r} {xyz[1]!r} {xyz[2]!r} "
                f"{rgb[0]} {rgb[1]} {rgb[2]} 0.5 " + " ".join(track) + "\n"
            )

    for image_id in scene.order:
        frame = scene.frames[image_id]
        (out / "images" / frame.name).write_bytes(encode_ppm(frame.pixels))

    train_ids, holdout_ids = default_split(scene, n_holdout)
    with open(out / "order.txt", "w", encoding="utf-8") as fh:
        fh.writelines(scene.frames[i].name + "\n" for i in train_ids)
    with open(out / "holdout.txt", "w", encoding="utf-8") as fh:
        fh.writelines(scene.frames[i].name + "\n" for i in holdout_ids)

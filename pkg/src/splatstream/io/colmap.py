"""Reader for COLMAP's text-format sparse reconstruction.

Only the text layout is supported: cameras.txt (one line per camera),
images.txt (two lines per image: pose line, then observation line), and
points3D.txt (one line per point with its observation track).  Pairwise
raw match counts are derived as shared-track counts, the standard
surrogate when the original feature matches are not stored.
"""

import itertools
from pathlib import Path

import numpy as np

from ..camera import CameraFrame
from ..errors import ColmapParseError, UnsupportedCameraModel
from ..field import SparsePoint, quat_to_rotmat
from .replay import SceneBundle

_MODELS = {
    "PINHOLE": 4,  # fx fy cx cy
    "SIMPLE_PINHOLE": 3,  # f cx cy
}


def _data_lines(path: Path):
    """Yield (line_number, stripped_text) skipping comments and blanks."""
    if not path.is_file():
        raise ColmapParseError(path, 0, "file is missing")
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            yield lineno, text


def _parse_cameras(path: Path):
    cameras = {}
    for lineno, text in _data_lines(path):
        parts = text.split()
        try:
            cam_id = int(parts[0])
            model = parts[1]
            width, height = int(parts[2]), int(parts[3])
            params = [float(p) for p in parts[4:]]
        except (IndexError, ValueError) as exc:
            raise ColmapParseError(path, lineno, "bad camera line") from exc
        if model not in _MODELS:
            raise UnsupportedCameraModel(model)
        if len(params) != _MODELS[model]:
            raise ColmapParseError(
                path, lineno,
                f"{model} expects {_MODELS[model]} parameters, got {len(params)}",
            )
        if model == "SIMPLE_PINHOLE":
            f, cx, cy = params
            fx = fy = f
        else:
            fx, fy, cx, cy = params
        cameras[cam_id] = (width, height, fx, fy, cx, cy)
    return cameras


def _parse_images(path: Path, cameras):
    """Two lines per image: pose + name, then the 2D observation list.

    The observation line is empty for images without keypoints, so blank
    lines only separate records while no pose line is pending.
    """
    if not path.is_file():
        raise ColmapParseError(path, 0, "file is missing")
    frames = {}
    order = []
    pending = None  # (lineno, fields of the pose line)
    with open(path, "r", encoding="utf-8") as fh:
        raw_lines = fh.readlines()
    for lineno, raw in enumerate(raw_lines, start=1):
        text = raw.strip()
        if text.startswith("#"):
            continue
        if not text and pending is None:
            continue
        parts = text.split()
        if pending is None:
            try:
                image_id = int(parts[0])
                q = [float(v) for v in parts[1:5]]
                t = [float(v) for v in parts[5:8]]
                cam_id = int(parts[8])
                name = parts[9]
            except (IndexError, ValueError) as exc:
                raise ColmapParseError(path, lineno, "bad image pose line") from exc
            if cam_id not in cameras:
                raise ColmapParseError(
                    path, lineno, f"image {image_id} references unknown camera {cam_id}"
                )
            pending = (lineno, image_id, q, t, cam_id, name)
        else:
            if len(parts) % 3 != 0:
                raise ColmapParseError(
                    path, lineno, "observation list length is not a multiple of 3"
                )
            _, image_id, q, t, cam_id, name = pending
            try:
                n_obs = len(parts) // 3
                point_ids = [int(parts[3 * k + 2]) for k in range(n_obs)]
            except ValueError as exc:
                raise ColmapParseError(path, lineno, "bad observation entry") from exc
            width, height, fx, fy, cx, cy = cameras[cam_id]
            rotation = quat_to_rotmat(np.array(q))
            frames[image_id] = CameraFrame(
                image_id=image_id,
                width=width,
                height=height,
                fx=fx,
                fy=fy,
                cx=cx,
                cy=cy,
                rotation=rotation,
                translation=np.array(t),
                feature_count=n_obs,
                name=name,
            )
            order.append(image_id)
            pending = None
    if pending is not None:
        raise ColmapParseError(
            path, len(raw_lines), f"image {pending[1]} has no observation line"
        )
    return frames, order


def _parse_points(path: Path, frames):
    points = {}
    image_points = {i: [] for i in frames}
    matches = {}
    for lineno, text in _data_lines(path):
        parts = text.split()
        try:
            pid = int(parts[0])
            xyz = np.array([float(v) for v in parts[1:4]])
            rgb = np.array([float(v) for v in parts[4:7]]) / 255.0
            float(parts[7])  # reprojection error, unused
            track = parts[8:]
            if len(track) % 2 != 0:
                raise ValueError("odd track length")
            track_images = [int(track[2 * k]) for k in range(len(track) // 2)]
        except (IndexError, ValueError) as exc:
            raise ColmapParseError(path, lineno, "bad point line") from exc
        for i in track_images:
            if i not in frames:
                raise ColmapParseError(
                    path, lineno, f"track references unknown image {i}"
                )
        points[pid] = SparsePoint(position=xyz, color=rgb)
        seen = sorted(set(track_images))
        for i in seen:
            image_points[i].append(pid)
        for a, b in itertools.combinations(seen, 2):
            matches[(a, b)] = matches.get((a, b), 0) + 1
    return points, image_points, matches


def read_colmap_text(scene_dir) -> SceneBundle:
    """Parse a cameras/images/points3D text triplet into a SceneBundle.

    The replay order defaults to images.txt order, matching the order in
    which the reconstruction originally ingested its inputs.
    """
    scene = Path(scene_dir)
    cameras = _parse_cameras(scene / "cameras.txt")
    frames, order = _parse_images(scene / "images.txt", cameras)
    points, image_points, matches = _parse_points(scene / "points3D.txt", frames)
    return SceneBundle(
        frames=frames,
        points=points,
        image_points=image_points,
        matches=matches,
        replay_order=order,
    )

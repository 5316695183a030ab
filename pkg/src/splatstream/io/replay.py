"""Replay of a reconstructed scene as a simulated fly-in feed.

A SceneBundle holds everything a finished sparse reconstruction knows:
posed frames, triangulated points with per-image membership, pairwise
match counts, and the order in which images originally arrived.  The
ReplayStream walks that order and hands out each frame exactly once,
together with the points it would have triangulated at that moment and
its match counts against frames that already arrived.
"""

from dataclasses import dataclass, field

from ..camera import CameraFrame
from ..errors import InvalidParameter, UnknownImageError
from ..field import SparsePoint


@dataclass
class SceneBundle:
    """A complete reconstructed scene plus its arrival order."""

    frames: dict  # image_id -> CameraFrame
    points: dict  # point_id -> SparsePoint
    image_points: dict  # image_id -> [point_id, ...]
    matches: dict  # (lo_id, hi_id) -> raw shared count
    replay_order: list  # image_ids, a permutation of frames
    refined_poses: dict = field(default_factory=dict)  # image_id -> (R, t)

    def __post_init__(self):
        ids = set(self.frames)
        if sorted(self.replay_order) != sorted(ids):
            raise InvalidParameter(
                "replay order is not a permutation of the registered images"
            )
        for (i, j) in self.matches:
            if i not in ids or j not in ids:
                raise UnknownImageError(f"match record references unknown image ({i}, {j})")
        for i in self.image_points:
            if i not in ids:
                raise UnknownImageError(f"point list references unknown image {i}")

    def raw_matches(self, i, j):
        key = (i, j) if i <= j else (j, i)
        return self.matches.get(key, 0)

    def frame(self, image_id) -> CameraFrame:
        try:
            return self.frames[image_id]
        except KeyError:
            raise UnknownImageError(f"image {image_id} is not in the bundle") from None


def restrict_bundle(bundle: SceneBundle, replay_ids) -> SceneBundle:
    """A new bundle limited to ``replay_ids``, replayed in that order.

    Frames outside the list vanish along with their match records; points
    survive only while some kept image still references them.
    """
    order = list(replay_ids)
    unknown = [i for i in order if i not in bundle.frames]
    if unknown:
        raise UnknownImageError(f"replay restriction names unknown images: {unknown}")
    if len(set(order)) != len(order):
        raise InvalidParameter("replay restriction repeats an image")
    keep = set(order)
    image_points = {i: list(bundle.image_points.get(i, [])) for i in order}
    referenced = {pid for pids in image_points.values() for pid in pids}
    return SceneBundle(
        frames={i: bundle.frames[i] for i in order},
        points={pid: bundle.points[pid] for pid in sorted(referenced)},
        image_points=image_points,
        matches={
            (a, b): n for (a, b), n in bundle.matches.items() if a in keep and b in keep
        },
        replay_order=order,
        refined_poses={i: p for i, p in bundle.refined_poses.items() if i in keep},
    )


@dataclass
class FlyInEvent:
    """One newly arrived image with its fresh points and match row."""

    frame: CameraFrame
    points: list  # SparsePoint, not yet delivered by an earlier frame
    match_row: dict  # previously arrived image_id -> raw match count


class ReplayStream:
    """Single-pass cursor over a SceneBundle in replay order."""

    def __init__(self, bundle: SceneBundle):
        self.bundle = bundle
        self._cursor = 0
        self._delivered_points = set()
        self._arrived = []

    @property
    def arrived(self):
        return list(self._arrived)

    @property
    def remaining(self) -> int:
        return len(self.bundle.replay_order) - self._cursor

    def _points_for(self, image_id):
        fresh = []
        for pid in self.bundle.image_points.get(image_id, []):
            if pid not in self._delivered_points:
                self._delivered_points.add(pid)
                fresh.append(self.bundle.points[pid])
        return fresh

    def initial(self, n: int):
        """Consume the first ``n`` frames as the bootstrap batch.

        Returns (frames, points, matches) where matches covers only pairs
        inside the batch.  Must be called before any events are taken.
        """
        if self._cursor != 0:
            raise InvalidParameter("initial() must run before the event stream")
        if not 0 < n <= len(self.bundle.replay_order):
            raise InvalidParameter(
                f"initial batch of {n} from {len(self.bundle.replay_order)} frames"
            )
        ids = self.bundle.replay_order[:n]
        frames = [self.bundle.frame(i) for i in ids]
        pts = []
        for i in ids:
            pts.extend(self._points_for(i))
        matches = {}
        for a in range(n):
            for b in range(a + 1, n):
                raw = self.bundle.raw_matches(ids[a], ids[b])
                if raw > 0:
                    matches[(ids[a], ids[b])] = raw
        self._cursor = n
        self._arrived = list(ids)
        return frames, pts, matches

    def events(self):
        """Yield one FlyInEvent per not-yet-consumed frame, in order."""
        order = self.bundle.replay_order
        while self._cursor < len(order):
            image_id = order[self._cursor]
            self._cursor += 1
            row = {}
            for prev in self._arrived:
                raw = self.bundle.raw_matches(image_id, prev)
                if raw > 0:
                    row[prev] = raw
            event = FlyInEvent(
                frame=self.bundle.frame(image_id),
                points=self._points_for(image_id),
                match_row=row,
            )
            self._arrived.append(image_id)
            yield event

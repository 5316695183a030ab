"""Gaussian field: parameter storage, covariance construction, expansion, maintenance.

Each Gaussian carries a position, an (unnormalized) rotation quaternion, three
log-scales, an opacity logit, and per-channel spherical-harmonic coefficients.
The world covariance of a Gaussian factors as R * S * S^T * R^T where R comes
from the normalized quaternion and S = diag(exp(log_scale)).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidParameter

log = logging.getLogger(__name__)

SH_C0 = 0.28209479177387814


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def rgb_to_dc(rgb):
    """Map an RGB triple in [0,1] to the degree-0 SH coefficient."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def dc_to_rgb(dc):
    return np.asarray(dc, dtype=np.float64) * SH_C0 + 0.5


def quat_to_rotmat(q):
    """Rotation matrices from quaternions (w, x, y, z), shape (..., 4) -> (..., 3, 3).

    Quaternions are normalized first; a zero-norm quaternion is rejected.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise InvalidParameter("zero-norm quaternion")
    w, x, y, z = np.moveaxis(q / norm, -1, 0)
    rot = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    rot[..., 0, 0] = 1 - 2 * (y * y + z * z)
    rot[..., 0, 1] = 2 * (x * y - w * z)
    rot[..., 0, 2] = 2 * (x * z + w * y)
    rot[..., 1, 0] = 2 * (x * y + w * z)
    rot[..., 1, 1] = 1 - 2 * (x * x + z * z)
    rot[..., 1, 2] = 2 * (y * z - w * x)
    rot[..., 2, 0] = 2 * (x * z - w * y)
    rot[..., 2, 1] = 2 * (y * z + w * x)
    rot[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return rot


def covariance_from_params(rotation, log_scale):
    """World covariance R * S * S^T * R^T for one Gaussian; symmetric PSD."""
    rot = quat_to_rotmat(np.asarray(rotation, dtype=np.float64).reshape(4))
    s = np.exp(np.asarray(log_scale, dtype=np.float64).reshape(3))
    m = rot * s[None, :]
    return m @ m.T


def covariances_from_params(rotations, log_scales):
    """Batched covariance construction, (N,4) + (N,3) -> (N,3,3)."""
    rot = quat_to_rotmat(rotations)
    m = rot * np.exp(log_scales)[:, None, :]
    return m @ np.swapaxes(m, -1, -2)


@dataclass
class Gaussian:
    """One record view of a field entry; arrays are copies, not views."""

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh: np.ndarray  # (3, (degree+1)^2)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_params(self.rotation, self.log_scale)


@dataclass
class SparsePoint:
    position: np.ndarray
    color: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.position).all() and np.isfinite(self.color).all())


class SpatialIndex:
    """Exact nearest-neighbor distances over a fixed point set.

    Immutable once built; expansion means building a new index.  Backed by a
    k-d tree (exact queries; approximate search would break the novelty
    filter's contract).
    """

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self._n = pts.shape[0]
        self._tree = cKDTree(pts) if self._n else None

    def __len__(self):
        return self._n

    def min_distance(self, queries):
        """Exact Euclidean distance from each query to the indexed set.

        Empty index -> +inf for every query.
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if self._tree is None:
            return np.full(queries.shape[0], np.inf)
        d, _ = self._tree.query(queries, k=1)
        return np.atleast_1d(d)


def filter_new_points(existing: SpatialIndex, candidates, threshold):
    """Candidates strictly farther than ``threshold`` from every existing point.

    An empty existing set passes every candidate through (all distances are
    infinite).
    """
    if threshold <= 0:
        raise InvalidParameter(f"novelty threshold must be positive, got {threshold}")
    if not candidates:
        return []
    pos = np.stack([c.position for c in candidates])
    dist = existing.min_distance(pos)
    return [c for c, d in zip(candidates, dist) if d > threshold]


def median_nn_spacing(points) -> float:
    """Median nearest-neighbor distance within a point set (novelty default)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 2:
        return 0.0
    tree = cKDTree(pts)
    d, _ = tree.query(pts, k=2)
    return float(np.median(d[:, 1]))


@dataclass
class DensifyOptions:
    grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    scene_extent: float = 1.0
    prune_opacity: float = 0.005
    split_scale_shrink: float = 1.6


@dataclass
class DensifySummary:
    cloned: int
    split: int
    pruned: int
    keep_mask: np.ndarray  # over the pre-call entries; False = removed
    n_added: int

    @property
    def changed(self) -> bool:
        return self.cloned > 0 or self.split > 0 or self.pruned > 0


class GaussianField:
    """Growable set of Gaussians, stored struct-of-arrays in float64.

    Single-writer: structural mutation requires exclusive access, and the
    ``generation`` counter increments on every structural change so retained
    render state can detect staleness.
    """

    def __init__(self, sh_degree: int = 0):
        if not 0 <= sh_degree <= 3:
            raise InvalidParameter(f"sh_degree must be in 0..3, got {sh_degree}")
        self.sh_degree = sh_degree
        k = (sh_degree + 1) ** 2
        self.positions = np.empty((0, 3))
        self.rotations = np.empty((0, 4))
        self.log_scales = np.empty((0, 3))
        self.opacity_logits = np.empty((0,))
        self.sh = np.empty((0, 3, k))
        self.generation = 0

    def __len__(self):
        return self.positions.shape[0]

    @property
    def n_sh_coeffs(self) -> int:
        return (self.sh_degree + 1) ** 2

    def opacities(self):
        return sigmoid(self.opacity_logits)

    def scales(self):
        return np.exp(self.log_scales)

    def covariances(self):
        return covariances_from_params(self.rotations, self.log_scales)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].copy(),
            rotation=self.rotations[i].copy(),
            log_scale=self.log_scales[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            sh=self.sh[i].copy(),
        )

    def checksum(self) -> str:
        """Hex digest over all parameter bytes; used for determinism checks."""
        import hashlib

        h = hashlib.sha256()
        for a in (self.positions, self.rotations, self.log_scales, self.opacity_logits, self.sh):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()

    def _append(self, positions, rotations, log_scales, opacity_logits, sh):
        self.positions = np.concatenate([self.positions, positions])
        self.rotations = np.concatenate([self.rotations, rotations])
        self.log_scales = np.concatenate([self.log_scales, log_scales])
        self.opacity_logits = np.concatenate([self.opacity_logits, opacity_logits])
        self.sh = np.concatenate([self.sh, sh])

    def _check_finite(self):
        for name, a in (
            ("positions", self.positions),
            ("rotations", self.rotations),
            ("log_scales", self.log_scales),
            ("opacity_logits", self.opacity_logits),
            ("sh", self.sh),
        ):
            if not np.isfinite(a).all():
                raise InvalidParameter(f"non-finite values in field {name}")

    def insert_points(self, points, init_opacity: float = 0.1) -> int:
        """Append one Gaussian per sparse point; returns the number inserted.

        Position and DC color come from the point; scale starts isotropic at
        the mean distance to the 3 nearest points among the union of existing
        centers and the other inserted points; rotation starts at identity.
        Non-finite points are skipped and logged.
        """
        usable = []
        skipped = 0
        for p in points:
            if p.finite:
                usable.append(p)
            else:
                skipped += 1
        if skipped:
            log.warning("insert_points: skipped %d non-finite points", skipped)
        n = len(usable)
        if n == 0:
            return 0

        new_pos = np.stack([p.position for p in usable])
        pool = np.concatenate([self.positions, new_pos]) if len(self) else new_pos
        if pool.shape[0] > 1:
            k = min(4, pool.shape[0])
            tree = cKDTree(pool)
            d, _ = tree.query(new_pos, k=k)
            # column 0 is the point itself (distance 0)
            mean_d = np.maximum(d[:, 1:].mean(axis=1), 1e-7)
        else:
            mean_d = np.full(n, 0.1)
        log_scales = np.log(mean_d)[:, None].repeat(3, axis=1)

        rotations = np.zeros((n, 4))
        rotations[:, 0] = 1.0
        opacity_logits = np.full(n, float(logit(init_opacity)))
        kcoef = self.n_sh_coeffs
        sh = np.zeros((n, 3, kcoef))
        sh[:, :, 0] = np.stack([rgb_to_dc(p.color) for p in usable])

        self._append(new_pos, rotations, log_scales, opacity_logits, sh)
        self.generation += 1
        self._check_finite()
        return n

    def densify_and_prune(self, grad_stats, opts: DensifyOptions, rng) -> DensifySummary:
        """Clone/split high-gradient Gaussians and prune near-transparent ones.

        ``grad_stats`` is the per-Gaussian average screen-space positional
        gradient magnitude accumulated since the last maintenance call.
        Large-extent Gaussians above the gradient threshold are replaced by
        two samples drawn from their own distribution with scales shrunk by
        ``split_scale_shrink``; small ones are cloned in place.
        """
        grad_stats = np.asarray(grad_stats, dtype=np.float64)
        if grad_stats.shape[0] != len(self):
            raise InvalidParameter(
                f"grad_stats length {grad_stats.shape[0]} != field size {len(self)}"
            )
        n = len(self)
        if n == 0:
            return DensifySummary(0, 0, 0, np.ones(0, dtype=bool), 0)

        scales = self.scales()
        max_scale = scales.max(axis=1)
        hot = grad_stats > opts.grad_threshold
        prune = sigmoid(self.opacity_logits) < opts.prune_opacity
        big = max_scale > opts.percent_dense * opts.scene_extent
        clone = hot & ~big & ~prune
        split = hot & big & ~prune

        add_pos, add_rot, add_ls, add_op, add_sh = [], [], [], [], []
        if clone.any():
            add_pos.append(self.positions[clone].copy())
            add_rot.append(self.rotations[clone].copy())
            add_ls.append(self.log_scales[clone].copy())
            add_op.append(self.opacity_logits[clone].copy())
            add_sh.append(self.sh[clone].copy())
        if split.any():
            idx = np.nonzero(split)[0]
            rep = np.repeat(idx, 2)
            rot = quat_to_rotmat(self.rotations[rep])
            eps = rng.standard_normal((rep.size, 3))
            offsets = np.einsum("nij,nj->ni", rot, scales[rep] * eps)
            add_pos.append(self.positions[rep] + offsets)
            add_rot.append(self.rotations[rep].copy())
            add_ls.append(self.log_scales[rep] - np.log(opts.split_scale_shrink))
            add_op.append(self.opacity_logits[rep].copy())
            add_sh.append(self.sh[rep].copy())

        keep = ~(split | prune)
        n_added = int(sum(a.shape[0] for a in add_pos)) if add_pos else 0
        summary = DensifySummary(
            cloned=int(clone.sum()),
            split=int(split.sum()),
            pruned=int(prune.sum()),
            keep_mask=keep,
            n_added=n_added,
        )
        if not summary.changed:
            return summary

        self.positions = self.positions[keep]
        self.rotations = self.rotations[keep]
        self.log_scales = self.log_scales[keep]
        self.opacity_logits = self.opacity_logits[keep]
        self.sh = self.sh[keep]
        if n_added:
            self._append(
                np.concatenate(add_pos),
                np.concatenate(add_rot),
                np.concatenate(add_ls),
                np.concatenate(add_op),
                np.concatenate(add_sh),
            )
        self.generation += 1
        self._check_finite()
        return summary

"""Iteration planning and per-image adaptive learning rates.

Each fly-in event gets a fixed budget of T_I iterations, split evenly into a
local half concentrated on the highest-weight key images (saturating
exponential allocation) and a semi-global half sampled uniformly from the
rest of the collection.  The position learning rate decays log-linearly with
how often an image has already been trained, then blends with the rates of
its overlap neighbors so a fresh image embedded in a well-trained region
starts gentler.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, UnknownImageError
from .overlap import MatchMatrix


@dataclass
class LrSchedule:
    eta0: float = 1.6e-4
    etaf: float = 1.6e-6
    t_a: int = 200

    def __post_init__(self):
        if not 0.0 < self.etaf <= self.eta0:
            raise InvalidParameter(f"need 0 < etaf <= eta0, got {self.etaf} vs {self.eta0}")
        if self.t_a <= 0:
            raise InvalidParameter(f"t_a must be positive, got {self.t_a}")


class TrainingState:
    """Per-image target counters; T_j counts iterations where j was rendered."""

    def __init__(self):
        self._counts = {}
        self.global_iteration = 0

    def register(self, image_id):
        self._counts.setdefault(image_id, 0)

    def __contains__(self, image_id):
        return image_id in self._counts

    @property
    def image_ids(self):
        """Ids in registration order."""
        return list(self._counts)

    def iterations_of(self, image_id) -> int:
        if image_id not in self._counts:
            raise UnknownImageError(f"image {image_id!r} is not registered")
        return self._counts[image_id]

    def record_iteration(self, image_id):
        if image_id not in self._counts:
            raise UnknownImageError(f"image {image_id!r} is not registered")
        self._counts[image_id] += 1
        self.global_iteration += 1


@dataclass
class IterationPlan:
    entries: list  # image id per iteration, length T_I
    key_ids: list
    local_counts: dict  # key image -> local iterations
    n_local: int
    n_semiglobal: int

    def __len__(self):
        return len(self.entries)


def allocate_local(weights, t_i: int):
    """Split the local half of T_I across key images by saturating weight.

    The real-valued share of key i is (1 - e^-w_i) / (2 sum_j (1 - e^-w_j))
    of T_I; shares are integerized by largest remainder so they sum to
    exactly T_I/2, then any zero allocation for a positive-weight key is
    repaired by donating from an over-allocated entry.  Donors must sit at
    or above their real share so the within-one-of-real bound survives the
    decrement; if no such donor exists the zero stands.
    """
    if not weights:
        raise InvalidParameter("allocate_local needs at least one key image")
    if t_i <= 0 or t_i % 2 != 0:
        raise InvalidParameter(f"T_I must be a positive even integer, got {t_i}")
    for wid, w in weights.items():
        if w < 0 or not math.isfinite(w):
            raise InvalidParameter(f"weight of {wid!r} must be finite and >= 0, got {w}")

    half = t_i // 2
    ids = list(weights)
    sat = np.array([1.0 - math.exp(-weights[i]) for i in ids])
    if sat.sum() == 0.0:
        # degenerate all-zero weights: uniform split of the local half
        real = np.full(len(ids), half / len(ids))
    else:
        real = sat / (2.0 * sat.sum()) * t_i

    counts = np.floor(real).astype(np.int64)
    remainders = real - counts
    short = half - int(counts.sum())
    # stable: larger remainder first, earlier key on ties
    order = sorted(range(len(ids)), key=lambda k: (-remainders[k], k))
    for k in order[:short]:
        counts[k] += 1

    if half >= len(ids):
        # every positive-weight key trains at least once
        for k, i in enumerate(ids):
            if weights[i] > 0 and counts[k] == 0:
                surplus = counts - real
                eligible = np.where((counts >= 2) & (surplus >= 0.0))[0]
                if eligible.size == 0:
                    continue
                donor = int(eligible[np.argmax(surplus[eligible])])
                counts[donor] -= 1
                counts[k] = 1
    return {i: int(c) for i, c in zip(ids, counts)}


def select_keys(weights, state: TrainingState, n_m: int):
    """Top-N_m images by weight; ties go to the most recently registered."""
    if n_m < 1:
        raise InvalidParameter(f"N_m must be >= 1, got {n_m}")
    order = {i: k for k, i in enumerate(state.image_ids)}
    ranked = sorted(weights, key=lambda i: (-weights[i], -order.get(i, -1)))
    return ranked[:n_m]


def build_plan(weights, state: TrainingState, t_i: int, n_m: int, rng,
               semiglobal: bool = True) -> IterationPlan:
    """Per-event iteration order: local and semi-global halves interleaved.

    With ``semiglobal`` off the whole budget goes to the key images and the
    entries are purely local (ablation hook).
    """
    registered = state.image_ids
    if not registered:
        raise InvalidParameter("no registered images to plan over")
    known = {i: w for i, w in weights.items() if i in state}
    keys = select_keys(known, state, n_m) if known else registered[: n_m]
    local_budget = t_i // 2 if semiglobal else t_i
    local_counts = allocate_local({i: known.get(i, 0.0) for i in keys}, 2 * local_budget)

    # round-robin over keys so no key monopolizes the start of the event
    remaining = dict(local_counts)
    local = []
    while len(local) < local_budget:
        progressed = False
        for i in keys:
            if remaining.get(i, 0) > 0:
                local.append(i)
                remaining[i] -= 1
                progressed = True
        if not progressed:
            break

    semi = []
    if semiglobal:
        pool = [i for i in registered if i not in set(keys)]
        if not pool:
            pool = list(registered)
        need = t_i // 2
        while len(semi) < need:
            perm = rng.permutation(len(pool))
            take = min(need - len(semi), len(pool))
            semi.extend(pool[k] for k in perm[:take])

    entries = []
    for a, b in zip(local, semi):
        entries.append(a)
        entries.append(b)
    if not semiglobal:
        entries = list(local)
    return IterationPlan(
        entries=entries,
        key_ids=list(keys),
        local_counts=local_counts,
        n_local=len(local),
        n_semiglobal=len(semi),
    )


def lr_single(t_j: int, schedule: LrSchedule) -> float:
    """Log-linear decay from eta0 to etaf over t_a target iterations."""
    if t_j < 0:
        raise InvalidParameter(f"iteration count must be >= 0, got {t_j}")
    t = min(t_j / schedule.t_a, 1.0)
    return math.exp(math.log(schedule.eta0) * (1.0 - t) + math.log(schedule.etaf) * t)


def lr_blended(image_id, matrix: MatchMatrix, state: TrainingState, schedule: LrSchedule) -> float:
    """Average the image's own rate with overlap-weighted neighbor rates."""
    own = lr_single(state.iterations_of(image_id), schedule)
    acc = own
    n = 0
    for other in matrix.neighbors(image_id):
        if other not in state:
            continue
        m = matrix.normalized_overlap(image_id, other)
        acc += m * lr_single(state.iterations_of(other), schedule)
        n += 1
    return acc / (n + 1)

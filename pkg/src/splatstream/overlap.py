"""Pairwise image-overlap bookkeeping and hierarchical fly-in weights.

When a new image arrives, registered images are layered by breadth-first
distance in the overlap graph (layer 1 is the new image itself, layer 2 its
direct matches, and so on).  Weights then flow outward: a direct neighbor's
weight is its normalized overlap with the new image, and a deeper image
averages its predecessors' weight-times-overlap over the whole previous
layer.  Images beyond the layer cap, or unreachable ones, get weight zero.
"""

import math
from collections import deque

from .errors import InvalidParameter, UnknownImageError

LAYER_CAP = 4
UNREACHABLE = math.inf


class MatchMatrix:
    """Symmetric raw match counts plus per-image feature counts.

    Single-writer: registration and match updates happen on the ingest
    thread; reads are safe from anywhere once an event is applied.
    """

    def __init__(self):
        self._features = {}
        self._matches = {}

    def __contains__(self, image_id):
        return image_id in self._features

    def __len__(self):
        return len(self._features)

    @property
    def image_ids(self):
        """Ids in registration order."""
        return list(self._features)

    def register_image(self, image_id, feature_count: int):
        if feature_count < 0:
            raise InvalidParameter(f"feature_count must be >= 0, got {feature_count}")
        self._features[image_id] = int(feature_count)

    def feature_count(self, image_id) -> int:
        self._require(image_id)
        return self._features[image_id]

    def set_matches(self, i, j, raw_count: int):
        self._require(i)
        self._require(j)
        if i == j:
            raise InvalidParameter("match count between an image and itself is unused")
        if raw_count < 0:
            raise InvalidParameter(f"match count must be >= 0, got {raw_count}")
        self._matches[self._key(i, j)] = int(raw_count)

    def raw_matches(self, i, j) -> int:
        self._require(i)
        self._require(j)
        return self._matches.get(self._key(i, j), 0)

    def normalized_overlap(self, i, j) -> float:
        """Raw matches scaled by the smaller feature count, clamped to [0, 1]."""
        raw = self.raw_matches(i, j)
        if raw == 0:
            return 0.0
        denom = min(self._features[i], self._features[j])
        if denom == 0:
            return 0.0
        return min(1.0, raw / denom)

    def neighbors(self, image_id):
        """Ids with a positive overlap to ``image_id``, in registration order."""
        self._require(image_id)
        return [
            other
            for other in self._features
            if other != image_id and self.raw_matches(image_id, other) > 0
        ]

    @staticmethod
    def _key(i, j):
        return (i, j) if repr(i) <= repr(j) else (j, i)

    def _require(self, image_id):
        if image_id not in self._features:
            raise UnknownImageError(f"image {image_id!r} is not registered")


def assign_layers(matrix: MatchMatrix, new_image):
    """Breadth-first layers from the new image; unreachable images get inf."""
    if new_image not in matrix:
        raise UnknownImageError(f"image {new_image!r} is not registered")
    layers = {image_id: UNREACHABLE for image_id in matrix.image_ids}
    layers[new_image] = 1
    queue = deque([new_image])
    while queue:
        cur = queue.popleft()
        for nb in matrix.neighbors(cur):
            if layers[nb] == UNREACHABLE:
                layers[nb] = layers[cur] + 1
                queue.append(nb)
    return layers


def compute_weights(matrix: MatchMatrix, layers):
    """Hierarchical weights: 1 for the new image, overlap-propagated outward.

    Layer 2 takes the normalized overlap with the new image directly; layer
    k >= 3 averages weight-times-overlap over every image of layer k-1
    (zero-overlap predecessors count in the divisor).  Layers past the cap
    contribute nothing and are skipped.
    """
    new_images = [i for i, l in layers.items() if l == 1]
    if len(new_images) != 1:
        raise InvalidParameter(f"expected exactly one layer-1 image, got {len(new_images)}")
    new_image = new_images[0]

    weights = {i: 0.0 for i in layers}
    weights[new_image] = 1.0
    by_layer = {}
    for i, l in layers.items():
        if l != UNREACHABLE:
            by_layer.setdefault(int(l), []).append(i)

    for i in by_layer.get(2, []):
        weights[i] = matrix.normalized_overlap(i, new_image)

    k = 3
    while k <= LAYER_CAP and k in by_layer:
        prev = by_layer[k - 1]
        for i in by_layer[k]:
            acc = 0.0
            for j in prev:
                acc += weights[j] * matrix.normalized_overlap(j, i)
            weights[i] = acc / len(prev)
        k += 1
    return weights


def weights_for_new_image(matrix: MatchMatrix, new_image):
    """Convenience: layers plus weights in one call."""
    layers = assign_layers(matrix, new_image)
    return compute_weights(matrix, layers), layers

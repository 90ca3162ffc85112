"""Ensemble fields: the transformation posterior pushed through value lookups.

Instead of reading one value at the mode displacement, every voxel keeps
the full distribution of values its candidate correspondences point at,
with equal values merged by summing their probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .core import (
    DisplacementSet,
    EnsembleField,
    Image,
    PosteriorField,
    ScalarField,
    scalar_keys,
)
from .errors import InvalidArgumentError
from .interpret import lookup, mode_transformation, warp_by_mode

DEFAULT_LEVELS = (0.05, 0.5, 0.95)


def _check_inputs(post: PosteriorField, disps: DisplacementSet):
    if post.K != disps.K:
        raise InvalidArgumentError(f"posterior has K={post.K} but displacement set has {disps.K}")


def _flat_probs(post: PosteriorField) -> np.ndarray:
    return post.probs.reshape(-1, post.K)


def pushforward_scalar(post: PosteriorField, disps: DisplacementSet, moving: Image) -> EnsembleField:
    """Intensity ensemble: atoms ``(I_m(v + d_k), P_k(v))``, aggregated.

    Lookups clamp to the bounds of ``moving``, which may be larger than the
    posterior grid.
    """
    _check_inputs(post, disps)
    values = lookup(moving.pixels, disps, post.shape).reshape(-1, post.K)
    offsets, vals, weights = _backend.kernels.aggregate_rows(scalar_keys(values), values, _flat_probs(post))
    return EnsembleField(post.width, post.height, "scalar", offsets, vals, weights)


def pushforward_label(post: PosteriorField, disps: DisplacementSet, labels: Image) -> EnsembleField:
    """Label ensemble from a non-negative integer label image (0 = background)."""
    _check_inputs(post, disps)
    if not labels.is_label_image():
        raise InvalidArgumentError("label image must hold non-negative integers")
    values = lookup(labels.pixels, disps, post.shape).reshape(-1, post.K)
    offsets, vals, weights = _backend.kernels.aggregate_rows(values, values, _flat_probs(post))
    return EnsembleField(post.width, post.height, "label", offsets, vals.astype(np.int64), weights)


def pushforward_vector(post: PosteriorField, disps: DisplacementSet) -> EnsembleField:
    """Displacement ensemble; atoms are distinct so only zero weights drop out."""
    _check_inputs(post, disps)
    order = np.lexsort((disps.vectors[:, 1], disps.vectors[:, 0]))
    probs = _flat_probs(post)[:, order]
    keep = probs > 0
    offsets = np.zeros(probs.shape[0] + 1, dtype=np.int64)
    np.cumsum(keep.sum(axis=1), out=offsets[1:])
    vectors = np.broadcast_to(disps.vectors[order], probs.shape + (2,))[keep]
    return EnsembleField(post.width, post.height, "vector", offsets, vectors, probs[keep])


# ---------------------------------------------------------------------------
# Per-cell statistics
# ---------------------------------------------------------------------------


def _cell_ids(field: EnsembleField) -> np.ndarray:
    return np.repeat(np.arange(field.width * field.height), field.counts())


def _segment_sum(field: EnsembleField, x: np.ndarray) -> np.ndarray:
    return np.add.reduceat(x, field.offsets[:-1]).reshape(field.shape)


def _require_kind(field: EnsembleField, kind: str):
    if field.kind != kind:
        raise InvalidArgumentError(f"expected a {kind} ensemble, got {field.kind}")


def ensemble_mode(field: EnsembleField) -> np.ndarray:
    """Most probable value per voxel; ties go to the smallest value.

    Returns ``(H, W)`` for scalar/label fields and ``(H, W, 2)`` for vectors.
    """
    w = field.weights
    wmax = np.maximum.reduceat(w, field.offsets[:-1])
    is_max = w == np.repeat(wmax, field.counts())
    hits = np.flatnonzero(is_max)
    # atoms are sorted within a cell, so the first maximum is the smallest value
    _, first = np.unique(_cell_ids(field)[hits], return_index=True)
    chosen = field.values[hits[first]]
    if field.kind == "vector":
        return chosen.reshape(field.height, field.width, 2)
    return chosen.reshape(field.shape)


def ensemble_mean_variance(field: EnsembleField):
    _require_kind(field, "scalar")
    mean = _segment_sum(field, field.weights * field.values)
    dev = field.values - np.repeat(mean.ravel(), field.counts())
    return mean, _segment_sum(field, field.weights * dev * dev)


def ensemble_variance_map(field: EnsembleField) -> ScalarField:
    return ScalarField(ensemble_mean_variance(field)[1])


def ensemble_entropy_map(field: EnsembleField) -> ScalarField:
    w = field.weights
    return ScalarField(-_segment_sum(field, w * np.log2(w)) + 0.0)


def label_probability_map(field: EnsembleField, label: int) -> ScalarField:
    _require_kind(field, "label")
    total = _segment_sum(field, np.where(field.values == label, field.weights, 0.0))
    # summed weights can overshoot 1 by an ulp
    return ScalarField(np.clip(total, 0.0, 1.0))


def exceedance_map(field: EnsembleField, threshold: float) -> ScalarField:
    """Probability per voxel that the value is at least ``threshold``."""
    _require_kind(field, "scalar")
    total = _segment_sum(field, np.where(field.values >= threshold, field.weights, 0.0))
    return ScalarField(np.clip(total, 0.0, 1.0))


def mode_mismatch_map(post: PosteriorField, disps: DisplacementSet, moving: Image) -> ScalarField:
    """1 where the most likely value differs from the value at the mode displacement."""
    ens = pushforward_scalar(post, disps, moving)
    most_likely = ensemble_mode(ens)
    at_mode = warp_by_mode(moving, mode_transformation(post, disps)).pixels
    return ScalarField((scalar_keys(most_likely) != scalar_keys(at_mode)).astype(np.float64))


# ---------------------------------------------------------------------------
# Iso-contours
# ---------------------------------------------------------------------------


@dataclass
class ContourSet:
    """Polylines of ``(x, y)`` points at one level.

    Closed polylines repeat their first point at the end.
    """

    level: float
    polylines: list = field(default_factory=list)

    def __len__(self):
        return len(self.polylines)

    @property
    def closed(self) -> list[bool]:
        return [len(p) > 2 and np.array_equal(p[0], p[-1]) for p in self.polylines]

    def points(self) -> np.ndarray:
        if not self.polylines:
            return np.zeros((0, 2))
        return np.concatenate(self.polylines)


def _edge_point(values, level, edge):
    kind, i, j = edge
    if kind == "h":
        v0, v1 = values[i, j], values[i, j + 1]
        t = (level - v0) / (v1 - v0)
        return (j + t, float(i))
    v0, v1 = values[i, j], values[i + 1, j]
    t = (level - v0) / (v1 - v0)
    return (float(j), i + t)


def _cell_segments(values, level, above, i, j):
    tl, tr, br, bl = above[i, j], above[i, j + 1], above[i + 1, j + 1], above[i + 1, j]
    top, bottom = ("h", i, j), ("h", i + 1, j)
    left, right = ("v", i, j), ("v", i, j + 1)
    crossing = []
    if tl != tr:
        crossing.append(top)
    if tr != br:
        crossing.append(right)
    if br != bl:
        crossing.append(bottom)
    if bl != tl:
        crossing.append(left)
    if len(crossing) == 2:
        return [tuple(crossing)]
    if len(crossing) == 4:
        center = 0.25 * (values[i, j] + values[i, j + 1] + values[i + 1, j + 1] + values[i + 1, j])
        if (center >= level) == tl:
            # TL and BR joined through the center; cut off TR and BL
            return [(top, right), (bottom, left)]
        return [(top, left), (right, bottom)]
    return []


def iso_contours(smap: ScalarField, level: float) -> ContourSet:
    """Marching-squares level set with linear interpolation along cell edges.

    Values ``>= level`` count as inside.  Ambiguous saddle cells are resolved
    with the average of their four corners.
    """
    if not np.isfinite(level):
        raise InvalidArgumentError("contour level must be finite")
    values = smap.values
    H, W = values.shape
    above = values >= level
    adjacency: dict = {}
    for i in range(H - 1):
        row_any = above[i:i + 2]
        if row_any.all() or not row_any.any():
            continue
        for j in range(W - 1):
            for a, b in _cell_segments(values, level, above, i, j):
                adjacency.setdefault(a, []).append(b)
                adjacency.setdefault(b, []).append(a)

    polylines = []
    visited = set()

    def walk(start):
        path = [start]
        visited.add(start)
        cur = start
        while True:
            # every edge point has at most two neighbours
            step = next((n for n in adjacency[cur] if n not in visited), None)
            if step is None:
                if len(path) > 2 and start in adjacency[cur]:
                    path.append(start)
                return path
            visited.add(step)
            path.append(step)
            cur = step

    nodes = sorted(adjacency)
    for node in nodes:
        if node not in visited and len(adjacency[node]) == 1:
            polylines.append(walk(node))
    for node in nodes:
        if node not in visited:
            polylines.append(walk(node))

    return ContourSet(
        float(level),
        [np.array([_edge_point(values, level, e) for e in path]) for path in polylines],
    )


def hausdorff(a: ContourSet, b: ContourSet) -> float:
    """Symmetric Hausdorff distance between the vertex sets of two contour sets."""
    from scipy.spatial.distance import cdist

    pa, pb = a.points(), b.points()
    if len(pa) == 0 and len(pb) == 0:
        return 0.0
    if len(pa) == 0 or len(pb) == 0:
        return float("inf")
    d = cdist(pa, pb)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))

"""Grid types and categorical-distribution primitives.

All grids are 2D and stored row-major as ``(height, width, ...)`` numpy
arrays, so pixel ``(x, y)`` lives at ``array[y, x]``.  Displacements are
integer ``(dx, dy)`` pixel offsets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from numbers import Integral

import numpy as np

from .errors import EmptyCellError, InvalidArgumentError, InvalidDistributionError

UNITY_TOL = 1e-9
SCALAR_KEY_SCALE = 1e6

KINDS = ("scalar", "label", "vector")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Image:
    """A 2D scalar image.

    Parameters
    ----------
    pixels : array_like, shape (height, width)
        Finite real intensities.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgumentError(f"image pixels must be a non-empty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise InvalidArgumentError("image contains non-finite intensities")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> Image:
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise InvalidArgumentError(
                f"pixel count {values.size} does not match {width}x{height}"
            )
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def is_label_image(self) -> bool:
        px = self.pixels
        return bool(np.all(px >= 0) and np.all(px == np.floor(px)))


@dataclass(frozen=True, eq=False)
class DisplacementSet:
    """Ordered set of K distinct integer ``(dx, dy)`` offsets; index k is identity."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.array(self.vectors)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 1:
            raise InvalidArgumentError(f"displacements must have shape (K, 2), got {v.shape}")
        if not np.all(v == np.round(v)):
            raise InvalidArgumentError("displacements must be integer offsets")
        v = v.astype(np.int64)
        if len({tuple(row) for row in v.tolist()}) != v.shape[0]:
            raise InvalidArgumentError("displacement vectors must be pairwise distinct")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @classmethod
    def grid(cls, radius: int) -> DisplacementSet:
        """All offsets in ``{-radius..radius}^2``, dy-major then dx."""
        if radius < 0:
            raise InvalidArgumentError("grid radius must be non-negative")
        r = np.arange(-radius, radius + 1)
        dy, dx = np.meshgrid(r, r, indexing="ij")
        return cls(np.stack([dx.ravel(), dy.ravel()], axis=1))

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    def __len__(self):
        return self.vectors.shape[0]

    def index_of(self, vec) -> int:
        hits = np.flatnonzero(np.all(self.vectors == np.asarray(vec), axis=1))
        if hits.size == 0:
            raise KeyError(tuple(vec))
        return int(hits[0])


@dataclass(frozen=True, eq=False)
class PosteriorField:
    """Per-voxel categorical distribution over K displacements.

    ``probs`` has shape ``(height, width, K)``.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 3 or min(p.shape) < 1:
            raise InvalidArgumentError(f"posterior must have shape (H, W, K), got {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise InvalidDistributionError("posterior probabilities must lie in [0, 1]")
        dev = np.abs(p.sum(axis=2) - 1.0)
        if np.any(dev > UNITY_TOL):
            y, x = np.unravel_index(int(np.argmax(dev)), dev.shape)
            raise InvalidDistributionError(
                f"posterior at voxel ({x}, {y}) sums to {p[y, x].sum()!r}, not 1"
            )
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def K(self) -> int:
        return self.probs.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    @classmethod
    def uniform(cls, height: int, width: int, K: int) -> PosteriorField:
        return cls(np.full((height, width, K), 1.0 / K))

    @classmethod
    def point_mass(cls, height: int, width: int, K: int, k: int) -> PosteriorField:
        p = np.zeros((height, width, K))
        p[:, :, k] = 1.0
        return cls(p)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Per-voxel real values, shape ``(height, width)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidArgumentError(f"scalar field must be 2D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("scalar field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class EnsembleField:
    """Per-voxel aggregated ``(value, weight)`` atoms, stored ragged.

    Voxel ``i = y * width + x`` owns atoms ``offsets[i]:offsets[i+1]`` of
    ``values`` and ``weights``.  Atoms inside a cell are sorted ascending by
    value (lexicographically for vectors) and have distinct aggregation keys.

    ``values`` is float64 of shape (M,) for ``scalar``, int64 (M,) for
    ``label`` and int64 (M, 2) for ``vector`` fields.
    """

    width: int
    height: int
    kind: str
    offsets: np.ndarray
    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown ensemble kind {self.kind!r}")
        n = self.width * self.height
        offsets = np.asarray(self.offsets, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if self.kind == "scalar":
            values = np.asarray(self.values, dtype=np.float64)
            shape_ok = values.ndim == 1
        elif self.kind == "label":
            values = np.asarray(self.values, dtype=np.int64)
            shape_ok = values.ndim == 1 and bool(np.all(values >= 0))
        else:
            values = np.asarray(self.values, dtype=np.int64).reshape(-1, 2)
            shape_ok = True
        if offsets.shape != (n + 1,) or offsets[0] != 0 or offsets[-1] != weights.size:
            raise InvalidArgumentError("ensemble offsets do not match the grid")
        if not shape_ok or values.shape[0] != weights.size:
            raise InvalidArgumentError(f"ensemble values invalid for kind {self.kind!r}")
        counts = np.diff(offsets)
        if np.any(counts < 1):
            raise EmptyCellError("every ensemble cell needs at least one atom")
        if np.any(weights <= 0.0) or np.any(weights > 1.0 + UNITY_TOL):
            raise InvalidDistributionError("ensemble weights must lie in (0, 1]")
        sums = np.add.reduceat(weights, offsets[:-1])
        if np.any(np.abs(sums - 1.0) > UNITY_TOL):
            raise InvalidDistributionError("ensemble cell weights must sum to 1")
        _check_sorted_distinct(self.kind, values, offsets)
        for arr in (offsets, values, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_cells(cls, width: int, height: int, kind: str, cells) -> EnsembleField:
        """Build from a row-major list of per-voxel realization lists.

        Each cell is aggregated first, so raw realizations are accepted.
        """
        cells = list(cells)
        if len(cells) != width * height:
            raise InvalidArgumentError("need exactly one cell per voxel")
        offsets = [0]
        values, weights = [], []
        for cell in cells:
            agg = aggregate(cell)
            for v, w in agg:
                values.append(v)
                weights.append(w)
            offsets.append(len(weights))
        if kind == "vector":
            values = np.asarray(values, dtype=np.int64).reshape(-1, 2)
        return cls(width, height, kind, np.asarray(offsets), np.asarray(values), np.asarray(weights))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def cell(self, x: int, y: int) -> list:
        i = y * self.width + x
        lo, hi = self.offsets[i], self.offsets[i + 1]
        w = self.weights[lo:hi].tolist()
        if self.kind == "vector":
            v = [tuple(row) for row in self.values[lo:hi].tolist()]
        else:
            v = self.values[lo:hi].tolist()
        return list(zip(v, w))

    def cells(self):
        for y in range(self.height):
            for x in range(self.width):
                yield self.cell(x, y)


def _check_sorted_distinct(kind, values, offsets):
    if values.shape[0] < 2:
        return
    same_cell = np.ones(values.shape[0] - 1, dtype=bool)
    same_cell[offsets[1:-1][offsets[1:-1] < values.shape[0]] - 1] = False
    if kind == "vector":
        a, b = values[:-1], values[1:]
        increasing = (a[:, 0] < b[:, 0]) | ((a[:, 0] == b[:, 0]) & (a[:, 1] < b[:, 1]))
    elif kind == "scalar":
        keys = scalar_keys(values)
        increasing = keys[:-1] < keys[1:]
    else:
        increasing = values[:-1] < values[1:]
    if np.any(same_cell & ~increasing):
        raise InvalidArgumentError("ensemble atoms must be sorted and distinct within a cell")


# ---------------------------------------------------------------------------
# Aggregation keys
# ---------------------------------------------------------------------------


def scalar_key(value: float) -> float:
    # 6-decimal rounding, half-up; same arithmetic as scalar_keys
    return math.floor(value * SCALAR_KEY_SCALE + 0.5)


def scalar_keys(values: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(values, dtype=np.float64) * SCALAR_KEY_SCALE + 0.5)


def aggregation_key(value):
    """Equality key for realization values.

    Integers (labels) and integer vectors compare exactly; reals compare
    after rounding to 6 decimals.
    """
    if isinstance(value, (tuple, list, np.ndarray)):
        return tuple(int(c) for c in value)
    if isinstance(value, Integral):
        return int(value)
    return scalar_key(float(value))


# ---------------------------------------------------------------------------
# Distribution primitives
# ---------------------------------------------------------------------------


def aggregate(realizations):
    """Merge realizations sharing an aggregation key by summing weights.

    Zero-weight realizations are dropped and the result is sorted by value.
    For reals merged under rounding, the smallest original value represents
    the group.

    >>> aggregate([(50, 0.1), (50, 0.1), (200, 0.3), (50, 0.5)])
    [(50, 0.7), (200, 0.3)]
    """
    groups = {}
    for value, weight in realizations:
        if weight < 0:
            raise InvalidDistributionError(f"negative weight {weight!r} for value {value!r}")
        if weight == 0:
            continue
        key = aggregation_key(value)
        if isinstance(value, np.ndarray):
            value = tuple(int(c) for c in value)
        if key in groups:
            rep, total = groups[key]
            groups[key] = (min(rep, value), total + weight)
        else:
            groups[key] = (value, weight)
    return [groups[k] for k in sorted(groups)]


def _check_unity(probs):
    if any(p < 0 for p in probs):
        raise InvalidDistributionError("probabilities must be non-negative")
    total = math.fsum(probs)
    if abs(total - 1.0) > UNITY_TOL:
        raise InvalidDistributionError(f"probabilities sum to {total!r}, not 1")


def entropy(dist) -> float:
    """Shannon entropy in bits, with ``0 * log2(0) = 0``."""
    probs = [float(p) for p in dist]
    _check_unity(probs)
    h = -sum(p * math.log2(p) for p in probs if p > 0)
    # -0.0 for point masses
    return h + 0.0


def weighted_mean_and_variance(realizations) -> tuple[float, float]:
    """Mean and population variance of a weighted scalar distribution."""
    if len(realizations) == 0:
        raise EmptyCellError("cannot take moments of an empty distribution")
    mean = sum(w * v for v, w in realizations)
    var = sum(w * (v - mean) ** 2 for v, w in realizations)
    return mean, var


def weighted_quantile(realizations, q: float) -> float:
    """Left-continuous step quantile: smallest value whose CDF reaches ``q``."""
    if not 0.0 <= q <= 1.0:
        raise InvalidArgumentError(f"quantile level {q!r} outside [0, 1]")
    atoms = sorted(((v, w) for v, w in realizations if w > 0), key=lambda a: a[0])
    if not atoms:
        raise EmptyCellError("cannot take a quantile of an empty distribution")
    cdf = 0.0
    for v, w in atoms:
        cdf += w
        if cdf >= q:
            return v
    # rounding left the total just below q (only possible near q = 1)
    return atoms[-1][0]

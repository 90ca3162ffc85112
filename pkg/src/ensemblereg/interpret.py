"""Mode transformation, mode warp and summary-statistic uncertainty maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DisplacementSet, Image, PosteriorField, ScalarField
from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Chosen displacement per voxel.

    ``index`` is ``(H, W)`` into ``disps``; ``vectors`` is the matching
    ``(H, W, 2)`` array of ``(dx, dy)``.
    """

    index: np.ndarray
    disps: DisplacementSet

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=np.int64)
        if idx.ndim != 2:
            raise InvalidArgumentError("displacement index field must be 2D")
        if np.any(idx < 0) or np.any(idx >= self.disps.K):
            raise InvalidArgumentError("displacement index outside the displacement set")
        object.__setattr__(self, "index", idx)

    @property
    def vectors(self) -> np.ndarray:
        return self.disps.vectors[self.index]

    @property
    def shape(self):
        return self.index.shape

    @classmethod
    def constant(cls, height: int, width: int, disps: DisplacementSet, k: int) -> DisplacementField:
        return cls(np.full((height, width), k, dtype=np.int64), disps)


def _check_k(post: PosteriorField, disps: DisplacementSet):
    if post.K != disps.K:
        raise InvalidArgumentError(f"posterior has K={post.K} but displacement set has {disps.K}")


def lookup(values: np.ndarray, disps: DisplacementSet, shape=None) -> np.ndarray:
    """Values at ``v + d_k`` for every voxel v and displacement k, clamped.

    ``values`` is an ``(Hm, Wm)`` grid; returns ``(H, W, K)`` where ``shape``
    (default: ``values.shape``) is the grid the voxels v range over.
    """
    Hm, Wm = values.shape
    H, W = shape if shape is not None else values.shape
    ys = np.clip(np.arange(H)[:, None] + disps.vectors[None, :, 1], 0, Hm - 1)
    xs = np.clip(np.arange(W)[:, None] + disps.vectors[None, :, 0], 0, Wm - 1)
    return values[ys[:, None, :], xs[None, :, :]]


def mode_transformation(post: PosteriorField, disps: DisplacementSet) -> DisplacementField:
    """Most probable displacement per voxel; ties go to the lowest index."""
    _check_k(post, disps)
    return DisplacementField(np.argmax(post.probs, axis=2), disps)


def warp_by_mode(moving: Image, field: DisplacementField) -> Image:
    """Registered image ``I_m(v + d_m(v))`` on the field's grid.

    Lookups clamp to the bounds of ``moving``.
    """
    Hm, Wm = moving.shape
    H, W = field.shape
    vec = field.vectors
    ys = np.clip(np.arange(H)[:, None] + vec[:, :, 1], 0, Hm - 1)
    xs = np.clip(np.arange(W)[None, :] + vec[:, :, 0], 0, Wm - 1)
    return Image(moving.pixels[ys, xs])


def entropy_values(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy in bits along the last axis, with 0 log 0 = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log2(np.where(probs > 0, probs, 1.0)), 0.0)
    return -terms.sum(axis=-1) + 0.0


def entropy_map(post: PosteriorField) -> ScalarField:
    return ScalarField(entropy_values(post.probs))


def displacement_moments(post: PosteriorField, disps: DisplacementSet):
    """Posterior mean ``(H, W, 2)`` and covariance ``(H, W, 2, 2)`` of d."""
    _check_k(post, disps)
    d = disps.vectors.astype(np.float64)
    mean = np.einsum("hwk,kc->hwc", post.probs, d)
    centered = d[None, None, :, :] - mean[:, :, None, :]
    cov = np.einsum("hwk,hwka,hwkb->hwab", post.probs, centered, centered)
    return mean, cov


def covariance_frobenius_map(post: PosteriorField, disps: DisplacementSet) -> ScalarField:
    _, cov = displacement_moments(post, disps)
    return ScalarField(np.sqrt(np.sum(cov * cov, axis=(2, 3))))


def displacement_std_maps(post: PosteriorField, disps: DisplacementSet):
    """Per-component standard deviation: square root of the covariance diagonal."""
    _, cov = displacement_moments(post, disps)
    return (ScalarField(np.sqrt(np.clip(cov[:, :, 0, 0], 0, None))),
            ScalarField(np.sqrt(np.clip(cov[:, :, 1, 1], 0, None))))


def _step_quantile(probs: np.ndarray, component: np.ndarray, q: float) -> np.ndarray:
    order = np.argsort(component, kind="stable")
    vals = component[order]
    w = probs[:, :, order]
    cdf = np.cumsum(w, axis=2)
    hit = (cdf >= q) & (w > 0)
    # if rounding keeps the CDF below q, fall back to the largest supported value
    last = w.shape[2] - 1 - np.argmax((w > 0)[:, :, ::-1], axis=2)
    first = np.where(hit.any(axis=2), np.argmax(hit, axis=2), last)
    return vals[first]


def displacement_iqr_map(post: PosteriorField, disps: DisplacementSet) -> np.ndarray:
    """Inter-quartile range of each displacement component, shape ``(H, W, 2)``."""
    _check_k(post, disps)
    out = np.empty(post.shape + (2,))
    for c in range(2):
        comp = disps.vectors[:, c].astype(np.float64)
        out[:, :, c] = _step_quantile(post.probs, comp, 0.75) - _step_quantile(post.probs, comp, 0.25)
    return out

"""Random-walker discrete registration producing a transformation posterior.

The data term scores every candidate displacement by the mean squared
patch difference; the random-walker step then smooths each displacement's
likelihood over a 4-connected image graph whose edge weights fall off
across fixed-image intensity edges.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _backend
from .core import DisplacementSet, Image, PosteriorField
from .errors import ConvergenceError, InvalidArgumentError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RwirConfig:
    """Free parameters of the registration engine.

    ``solver_max_iter=None`` means ten iterations per voxel.
    """

    patch_radius: int = 1
    sigma: float = 25.0
    gamma: float = 0.5
    beta_g: float = 0.005
    epsilon_w: float = 1e-6
    solver_tol: float = 1e-10
    solver_max_iter: Optional[int] = None

    def __post_init__(self):
        if self.patch_radius < 0:
            raise InvalidArgumentError("patch_radius must be non-negative")
        for name in ("sigma", "gamma", "epsilon_w", "solver_tol"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if not self.beta_g >= 0:
            raise InvalidArgumentError("beta_g must be non-negative")
        if self.solver_max_iter is not None and self.solver_max_iter < 1:
            raise InvalidArgumentError("solver_max_iter must be a positive integer")

    def max_iter_for(self, n_voxels: int) -> int:
        if self.solver_max_iter is None:
            return 10 * n_voxels
        return self.solver_max_iter


def _check_same_grid(fixed: Image, moving: Image):
    if fixed.shape != moving.shape:
        raise InvalidArgumentError(
            f"fixed image is {fixed.width}x{fixed.height} but moving image is "
            f"{moving.width}x{moving.height}"
        )


def data_likelihood(fixed: Image, moving: Image, disps: DisplacementSet,
                    cfg: RwirConfig = RwirConfig()) -> PosteriorField:
    """Per-voxel normalized Gaussian patch-similarity scores."""
    _check_same_grid(fixed, moving)
    area = (2 * cfg.patch_radius + 1) ** 2
    ssd = _backend.kernels.patch_ssd(fixed.pixels, moving.pixels, disps.vectors, cfg.patch_radius)
    scores = np.exp(-ssd / (2.0 * cfg.sigma ** 2 * area))
    totals = scores.sum(axis=2, keepdims=True)
    underflow = totals[:, :, 0] == 0.0
    if np.any(underflow):
        log.debug("likelihood underflow at %d voxels; using uniform", int(underflow.sum()))
        scores[underflow] = 1.0
        totals[underflow] = disps.K
    return PosteriorField(scores / totals)


def edge_weights(fixed: Image, cfg: RwirConfig):
    """Horizontal ``(H, W-1)`` and vertical ``(H-1, W)`` graph edge weights."""
    px = fixed.pixels
    wh = np.exp(-cfg.beta_g * np.diff(px, axis=1) ** 2) + cfg.epsilon_w
    wv = np.exp(-cfg.beta_g * np.diff(px, axis=0) ** 2) + cfg.epsilon_w
    return wh, wv


def laplacian_matrix(fixed: Image, cfg: RwirConfig):
    """Sparse graph Laplacian of the fixed-image grid, row-major voxel order."""
    from scipy import sparse

    H, W = fixed.shape
    wh, wv = edge_weights(fixed, cfg)
    idx = np.arange(H * W).reshape(H, W)
    i = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
    j = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
    w = np.concatenate([wh.ravel(), wv.ravel()])
    adj = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                            shape=(H * W, H * W)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    return (sparse.diags(deg) - adj).tocsr()


def solve_regularized(likelihood: PosteriorField, fixed: Image, cfg: RwirConfig = RwirConfig()):
    """Raw solutions of ``(L + gamma I) x_k = gamma p_k``, shape ``(H, W, K)``.

    No clipping or renormalization is applied.
    """
    if likelihood.shape != fixed.shape:
        raise InvalidArgumentError("likelihood and fixed image grids differ")
    H, W = fixed.shape
    wh, wv = edge_weights(fixed, cfg)
    p = np.ascontiguousarray(np.moveaxis(likelihood.probs, 2, 0))
    # warm start at the likelihood: exact when the likelihood is spatially constant
    x, iters, relres = _backend.kernels.solve_shifted_laplacian(
        wh, wv, cfg.gamma, cfg.gamma * p, p, cfg.solver_tol,
        cfg.max_iter_for(H * W), _backend.get_num_threads(),
    )
    worst = float(np.max(relres))
    if worst > cfg.solver_tol:
        raise ConvergenceError(
            f"conjugate gradient did not reach relative residual {cfg.solver_tol:g} "
            f"within {cfg.max_iter_for(H * W)} iterations (worst residual {worst:.3e})",
            worst,
        )
    log.debug("random walker solves: max %d iterations", int(np.max(iters, initial=0)))
    return np.moveaxis(x, 0, 2)


def random_walker_regularize(likelihood: PosteriorField, fixed: Image,
                             cfg: RwirConfig = RwirConfig()) -> PosteriorField:
    """Smooth each displacement's likelihood over the fixed-image graph."""
    if likelihood.shape != fixed.shape:
        raise InvalidArgumentError("likelihood and fixed image grids differ")
    if fixed.width == 1 and fixed.height == 1:
        # no edges: the system is gamma * x = gamma * p
        return likelihood
    x = solve_regularized(likelihood, fixed, cfg)
    x = np.clip(x, 0.0, None)
    return PosteriorField(x / x.sum(axis=2, keepdims=True))


def register(fixed: Image, moving: Image, disps: DisplacementSet,
             cfg: RwirConfig = RwirConfig()) -> PosteriorField:
    """Transformation posterior for registering ``moving`` onto ``fixed``."""
    likelihood = data_likelihood(fixed, moving, disps, cfg)
    return random_walker_regularize(likelihood, fixed, cfg)

"""Compiled kernels against the numpy fallback and loop oracles."""
import numpy as np
import pytest

from ensemblereg import _backend, _pykernels
from ensemblereg.core import DisplacementSet, aggregate, scalar_keys

from .oracles import brute_ssd

needs_cython = pytest.mark.skipif(_backend.NAME != "cython", reason="compiled backend not built")


@pytest.mark.parametrize("radius", [0, 1, 2])
def test_patch_ssd_matches_brute_force(backend, rng, radius):
    fixed = rng.integers(0, 255, (7, 9)).astype(float)
    moving = rng.integers(0, 255, (7, 9)).astype(float)
    disps = DisplacementSet.grid(2).vectors
    got = _backend.kernels.patch_ssd(fixed, moving, disps, radius)
    np.testing.assert_array_equal(got, brute_ssd(fixed, moving, disps.tolist(), radius))


def test_aggregate_rows_matches_core_aggregate(backend, rng):
    values = rng.integers(0, 4, (50, 9)).astype(float)
    weights = rng.dirichlet(np.ones(9), 50)
    weights[rng.random((50, 9)) < 0.2] = 0.0
    weights /= weights.sum(axis=1, keepdims=True)
    offsets, vals, w = _backend.kernels.aggregate_rows(scalar_keys(values), values, weights)
    for n in range(50):
        expected = aggregate(list(zip(values[n].tolist(), weights[n].tolist())))
        lo, hi = offsets[n], offsets[n + 1]
        assert vals[lo:hi].tolist() == [v for v, _ in expected]
        np.testing.assert_allclose(w[lo:hi], [x for _, x in expected], rtol=0, atol=1e-15)


def test_aggregate_rows_representative_is_smallest(backend):
    values = np.array([[2.0000004, 2.0000001, 5.0]])
    weights = np.array([[0.25, 0.25, 0.5]])
    offsets, vals, w = _backend.kernels.aggregate_rows(scalar_keys(values), values, weights)
    assert offsets.tolist() == [0, 2]
    assert vals.tolist() == [2.0000001, 5.0]
    assert w.tolist() == [0.5, 0.5]


def _random_system(rng, H=9, W=11, K=5):
    px = rng.random((H, W)) * 255
    wh = np.exp(-0.005 * np.diff(px, axis=1) ** 2) + 1e-6
    wv = np.exp(-0.005 * np.diff(px, axis=0) ** 2) + 1e-6
    rhs = rng.random((K, H, W))
    return wh, wv, rhs


@needs_cython
def test_solvers_agree(rng):
    wh, wv, rhs = _random_system(rng)
    xc, _, rc = _backend.kernels.solve_shifted_laplacian(wh, wv, 0.5, rhs, rhs, 1e-12, 10000)
    xp, _, rp = _pykernels.solve_shifted_laplacian(wh, wv, 0.5, rhs, rhs, 1e-12, 10000)
    assert rc.max() <= 1e-12 and rp.max() <= 1e-12
    np.testing.assert_allclose(xc, xp, atol=1e-10)


@needs_cython
def test_compiled_solver_independent_of_thread_count(rng):
    wh, wv, rhs = _random_system(rng, K=8)
    runs = [_backend.kernels.solve_shifted_laplacian(wh, wv, 0.5, rhs, rhs, 1e-10, 10000, n)[0]
            for n in (1, 2, 4)]
    for x in runs[1:]:
        assert np.array_equal(x, runs[0])


def test_solver_reports_residuals(backend, rng):
    wh, wv, rhs = _random_system(rng, K=3)
    x, iters, relres = _backend.kernels.solve_shifted_laplacian(wh, wv, 0.5, rhs, np.zeros_like(rhs), 1e-10, 2)
    assert np.all(iters == 2)
    assert np.all(relres > 1e-10)

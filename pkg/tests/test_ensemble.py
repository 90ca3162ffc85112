import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensemblereg import ensemble as ens
from ensemblereg.core import DisplacementSet, EnsembleField, Image, PosteriorField, ScalarField, scalar_key
from ensemblereg.errors import InvalidArgumentError
from ensemblereg.interpret import entropy_map

from .oracles import brute_entropy, brute_mode, brute_variance, group, voxel_atoms


def random_case(rng, H, W, K, levels=None, sparsity=0.3):
    disps = DisplacementSet([tuple(v) for v in rng.choice(
        DisplacementSet.grid(2).vectors, size=K, replace=False)])
    p = rng.dirichlet(np.ones(K), (H, W))
    p[rng.random((H, W, K)) < sparsity] = 0.0
    p[:, :, 0] += 1e-3
    p /= p.sum(axis=2, keepdims=True)
    if levels is None:
        moving = rng.random((H, W)) * 255
    else:
        moving = rng.integers(0, levels, (H, W)).astype(float)
    return PosteriorField(p), disps, Image(moving)


# -- pushforward examples -----------------------------------------------------


def test_pushforward_merges_equal_values():
    moving = Image(np.array([[50.0, 50.0, 200.0], [50.0, 50.0, 50.0], [50.0, 50.0, 50.0]]))
    disps = DisplacementSet([(0, 0), (1, 0), (2, 0), (0, 1)])
    post = PosteriorField(np.array([[[0.1, 0.1, 0.3, 0.5]]]))
    field = ens.pushforward_scalar(post, disps, moving)
    (v0, w0), (v1, w1) = field.cell(0, 0)
    assert (v0, v1) == (50.0, 200.0)
    assert w0 == pytest.approx(0.7, abs=1e-15) and w1 == pytest.approx(0.3, abs=1e-15)
    assert ens.ensemble_mode(field)[0, 0] == 50.0


def test_pushforward_label_and_probability():
    labels = Image(np.array([[0, 1], [1, 2]], dtype=float))
    disps = DisplacementSet([(0, 0), (1, 0), (0, 1), (1, 1)])
    post = PosteriorField(np.broadcast_to([0.4, 0.3, 0.2, 0.1], (2, 2, 4)))
    field = ens.pushforward_label(post, disps, labels)
    assert field.kind == "label"
    assert field.cell(0, 0) == [(0, 0.4), (1, pytest.approx(0.5)), (2, pytest.approx(0.1))]
    prob = ens.label_probability_map(field, 1).values
    assert prob[0, 0] == pytest.approx(0.5)
    assert prob[1, 1] == 0.0


def test_pushforward_label_rejects_non_integer():
    with pytest.raises(InvalidArgumentError):
        ens.pushforward_label(PosteriorField.uniform(1, 1, 1), DisplacementSet([(0, 0)]), Image([[0.5]]))


def test_pushforward_vector_keeps_support():
    disps = DisplacementSet([(1, 0), (-1, 0), (0, 0)])
    post = PosteriorField(np.array([[[0.5, 0.0, 0.5]]]))
    field = ens.pushforward_vector(post, disps)
    assert field.cell(0, 0) == [((0, 0), 0.5), ((1, 0), 0.5)]
    assert ens.ensemble_mode(field)[0, 0].tolist() == [0, 0]


def test_moving_image_larger_than_grid():
    moving = Image(np.arange(9, dtype=float).reshape(3, 3))
    disps = DisplacementSet([(2, 2)])
    field = ens.pushforward_scalar(PosteriorField.uniform(1, 1, 1), disps, moving)
    assert field.cell(0, 0) == [(8.0, 1.0)]


def test_rounding_merge_uses_smallest_value():
    moving = Image(np.array([[1.0000002, 1.0000001, 3.0]]))
    disps = DisplacementSet([(0, 0), (1, 0), (2, 0)])
    field = ens.pushforward_scalar(PosteriorField(np.array([[[0.25, 0.25, 0.5]]])), disps, moving)
    assert field.cell(0, 0) == [(1.0000001, 0.5), (3.0, 0.5)]


def test_statistics_point_mass():
    post = PosteriorField.point_mass(2, 2, 3, 1)
    disps = DisplacementSet([(0, 0), (1, 0), (0, 1)])
    field = ens.pushforward_scalar(post, disps, Image(np.array([[1.0, 2.0], [3.0, 4.0]])))
    assert np.all(ens.ensemble_variance_map(field).values == 0)
    assert np.all(ens.ensemble_entropy_map(field).values == 0)
    np.testing.assert_array_equal(ens.ensemble_mode(field), [[2.0, 2.0], [4.0, 4.0]])


def test_exceedance_map():
    field = EnsembleField.from_cells(2, 1, "scalar", [[(10.0, 0.25), (20.0, 0.75)], [(5.0, 1.0)]])
    np.testing.assert_allclose(ens.exceedance_map(field, 20.0).values, [[0.75, 0.0]])
    np.testing.assert_allclose(ens.exceedance_map(field, 0.0).values, [[1.0, 1.0]])
    with pytest.raises(InvalidArgumentError):
        ens.exceedance_map(EnsembleField.from_cells(1, 1, "label", [[(1, 1.0)]]), 0.5)


def test_mode_mismatch_example():
    moving = Image(np.array([[50.0, 50.0, 200.0], [50.0, 50.0, 50.0], [50.0, 50.0, 50.0]]))
    disps = DisplacementSet([(0, 0), (1, 0), (2, 0), (0, 1)])
    post = PosteriorField(np.array([[[0.2, 0.2, 0.4, 0.2]]]))
    assert ens.mode_mismatch_map(post, disps, moving).values[0, 0] == 1.0
    post = PosteriorField(np.array([[[0.1, 0.1, 0.2, 0.6]]]))
    assert ens.mode_mismatch_map(post, disps, moving).values[0, 0] == 0.0


# -- oracle equivalence ---------------------------------------------------------


@pytest.mark.parametrize("levels", [None, 4])
def test_scalar_pushforward_matches_oracle(backend, rng, levels):
    for _ in range(5):
        post, disps, moving = random_case(rng, 5, 4, 6, levels)
        field = ens.pushforward_scalar(post, disps, moving)
        var = ens.ensemble_variance_map(field).values
        ent = ens.ensemble_entropy_map(field).values
        mode = ens.ensemble_mode(field)
        for y in range(5):
            for x in range(4):
                atoms = voxel_atoms(post.probs, disps.vectors.tolist(), moving.pixels, x, y)
                by_key = group(atoms, key=scalar_key)
                cell = field.cell(x, y)
                assert [scalar_key(v) for v, _ in cell] == sorted(by_key)
                for v, w in cell:
                    assert w == pytest.approx(by_key[scalar_key(v)], abs=1e-12)
                reps = {}
                for v, w in atoms:
                    if w > 0:
                        reps[scalar_key(v)] = min(reps.get(scalar_key(v), math.inf), v)
                totals = {reps[k]: w for k, w in by_key.items()}
                assert var[y, x] == pytest.approx(brute_variance(totals), abs=1e-9)
                assert ent[y, x] == pytest.approx(brute_entropy(totals.values()), abs=1e-12)
                assert scalar_key(mode[y, x]) in by_key
                best = max(by_key.values())
                assert by_key[scalar_key(mode[y, x])] >= best - 1e-12


def test_label_pushforward_matches_oracle(backend, rng):
    post, disps, moving = random_case(rng, 6, 6, 8, levels=3)
    field = ens.pushforward_label(post, disps, moving)
    mode = ens.ensemble_mode(field)
    for y in range(6):
        for x in range(6):
            totals = group(voxel_atoms(post.probs, disps.vectors.tolist(), moving.pixels, x, y), key=int)
            cell = dict(field.cell(x, y))
            assert sorted(cell) == sorted(totals)
            for k in totals:
                assert cell[k] == pytest.approx(totals[k], abs=1e-12)
            if len(set(np.round(list(totals.values()), 12))) == len(totals):
                assert mode[y, x] == brute_mode(totals)


# -- properties -----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(1, 9),
       st.sampled_from([None, 2, 5]))
def test_pushforward_does_not_increase_entropy(seed, H, W, K, levels):
    rng = np.random.default_rng(seed)
    post, disps, moving = random_case(rng, H, W, min(K, 25), levels)
    field = ens.pushforward_scalar(post, disps, moving)
    sums = np.add.reduceat(field.weights, field.offsets[:-1])
    assert np.max(np.abs(sums - 1.0)) <= 1e-9
    assert np.all(ens.ensemble_entropy_map(field).values <= entropy_map(post).values + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_injective_lookup_has_no_mismatch(seed):
    rng = np.random.default_rng(seed)
    H, W = 4, 5
    disps = DisplacementSet([(0, 0), (1, 0), (0, 1), (1, 1)])
    # distinct values everywhere, and displacements never reach the clamped border
    moving = Image(rng.permutation((H + 1) * (W + 1)).reshape(H + 1, W + 1).astype(float))
    post = PosteriorField(rng.dirichlet(np.ones(4), (H, W)))
    assert np.all(ens.mode_mismatch_map(post, disps, moving).values == 0)
    field = ens.pushforward_scalar(post, disps, moving)
    np.testing.assert_allclose(ens.ensemble_entropy_map(field).values, entropy_map(post).values, atol=1e-12)


# -- contours -------------------------------------------------------------------


def test_constant_map_has_no_contours():
    assert len(ens.iso_contours(ScalarField(np.full((5, 5), 0.3)), 0.5)) == 0
    assert len(ens.iso_contours(ScalarField(np.full((5, 5), 0.7)), 0.5)) == 0


def test_vertical_step_contour_at_midline():
    values = np.zeros((6, 8))
    values[:, 4:] = 1.0
    cs = ens.iso_contours(ScalarField(values), 0.5)
    assert len(cs) == 1 and cs.closed == [False]
    pts = cs.points()
    np.testing.assert_allclose(pts[:, 0], 3.5)
    assert pts[:, 1].min() == 0 and pts[:, 1].max() == 5


def test_disk_contour_radius():
    yy, xx = np.mgrid[0:41, 0:41]
    r = np.hypot(xx - 20, yy - 20)
    smap = ScalarField(np.clip(12.5 - r, 0, 1))
    cs = ens.iso_contours(smap, 0.5)
    assert len(cs) == 1 and cs.closed == [True]
    radii = np.hypot(cs.points()[:, 0] - 20, cs.points()[:, 1] - 20)
    assert abs(radii.mean() - 12.0) <= 1.0


def test_radial_field_single_closed_polyline():
    yy, xx = np.mgrid[0:21, 0:21]
    smap = ScalarField(np.exp(-((xx - 10.0) ** 2 + (yy - 10.0) ** 2) / 30.0))
    for level in (0.05, 0.5, 0.95):
        cs = ens.iso_contours(smap, level)
        assert len(cs) == 1 and cs.closed == [True]
        p = cs.polylines[0]
        assert np.array_equal(p[0], p[-1])


def _segments(cs):
    return sorted(tuple(sorted(tuple(np.round(q, 9)) for q in p)) for p in cs.polylines)


def test_saddle_resolution_uses_center():
    smap = ScalarField(np.array([[1.0, 0.0], [0.0, 1.0]]))
    # centre average 0.5 is inside at level 0.4: the high corners stay joined
    assert _segments(ens.iso_contours(smap, 0.4)) == [
        ((0.0, 0.6), (0.4, 1.0)), ((0.6, 0.0), (1.0, 0.4))]
    # and outside at level 0.6: the low corners are joined instead
    assert _segments(ens.iso_contours(smap, 0.6)) == [
        ((0.0, 0.4), (0.4, 0.0)), ((0.6, 1.0), (1.0, 0.6))]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.95))
def test_contour_points_within_bounds(seed, level):
    rng = np.random.default_rng(seed)
    values = rng.random((7, 9))
    cs = ens.iso_contours(ScalarField(values), level)
    pts = cs.points()
    if len(pts):
        assert pts[:, 0].min() >= 0 and pts[:, 0].max() <= 8
        assert pts[:, 1].min() >= 0 and pts[:, 1].max() <= 6
    for p, closed in zip(cs.polylines, cs.closed):
        assert len(p) >= 2
        if closed:
            assert len(p) >= 4


def test_hausdorff():
    a = ens.ContourSet(0.5, [np.array([[0.0, 0.0], [1.0, 0.0]])])
    b = ens.ContourSet(0.5, [np.array([[0.0, 3.0], [1.0, 0.0]])])
    assert ens.hausdorff(a, b) == 3.0
    assert ens.hausdorff(a, a) == 0.0
    assert ens.hausdorff(ens.ContourSet(0.5), ens.ContourSet(0.5)) == 0.0
    assert ens.hausdorff(a, ens.ContourSet(0.5)) == math.inf

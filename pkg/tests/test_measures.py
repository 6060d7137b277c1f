import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scoreflow.measures import (
    fig1_measure,
    lemniscate_dataset,
    lemniscate_point,
    lemniscate_residual,
    load_measure,
    make_empirical,
    monotone_chain,
    save_measure,
    support_geometry,
    two_dirac_measure,
)


def test_normalizes_weights():
    mu = make_empirical([[0.0], [1.0]], [1.0, 3.0])
    np.testing.assert_allclose(mu.weights, [0.25, 0.75])
    assert mu.dim == 1 and mu.size == 2


def test_scalar_list_is_one_dimensional():
    mu = make_empirical([-1.0, 2.0, 5.0])
    assert mu.points.shape == (3, 1)
    np.testing.assert_allclose(mu.weights, 1 / 3)


def test_merges_duplicates_in_first_occurrence_order():
    mu = make_empirical([[2.0, 0.0], [1.0, 1.0], [2.0, 0.0]], [1.0, 1.0, 2.0])
    np.testing.assert_array_equal(mu.points, [[2.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(mu.weights, [0.75, 0.25])


@pytest.mark.parametrize("weights", [[1.0, 0.0], [1.0, -1.0], [1.0, np.nan]])
def test_rejects_bad_weights(weights):
    with pytest.raises(ValueError):
        make_empirical([[0.0], [1.0]], weights)


def test_rejects_empty_and_mismatch():
    with pytest.raises(ValueError):
        make_empirical([])
    with pytest.raises(ValueError):
        make_empirical([[0.0], [1.0]], [1.0])


def test_arrays_are_read_only():
    mu = two_dirac_measure()
    with pytest.raises(ValueError):
        mu.points[0, 0] = 3.0


def test_fig1_weights_renormalized():
    mu = fig1_measure()
    np.testing.assert_allclose(mu.weights, np.array([0.7, 0.3, 0.1]) / 1.1)
    np.testing.assert_array_equal(mu.points[:, 0], [-5.0, 0.0, 5.0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (7, 2), elements=st.floats(-10, 10)),
       arrays(np.float64, 7, elements=st.floats(0.01, 10)))
def test_weights_sum_to_one(points, weights):
    mu = make_empirical(points, weights)
    assert abs(mu.weights.sum() - 1.0) <= 1e-12
    assert mu.size == np.unique(points, axis=0).shape[0]


def test_round_trip_file(tmp_path):
    mu = make_empirical([[0.0, 1.0], [2.0, -1.0]], [0.2, 0.8])
    save_measure(mu, tmp_path / "m.json")
    back = load_measure(tmp_path / "m.json")
    np.testing.assert_array_equal(back.points, mu.points)
    np.testing.assert_array_equal(back.weights, mu.weights)


def test_load_rejects_dim_mismatch(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"dim": 3, "points": [[0.0, 1.0]]}))
    with pytest.raises(ValueError):
        load_measure(tmp_path / "m.json")


def test_lemniscate_points_on_curve():
    mu = lemniscate_dataset(500, half_width=1.5, seed=3)
    assert mu.size == 500
    assert lemniscate_residual(mu.points, 1.5).max() < 1e-12


def test_lemniscate_arc_length_uniform():
    # compare against the empirical arc length of a dense polyline
    mu = lemniscate_dataset(20000, seed=1)
    th = np.linspace(0, 2 * np.pi, 200001)
    curve = lemniscate_point(th, 1.0)
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    # share of arc length in the right lobe near the tip (x > 0.8)
    mid = 0.5 * (curve[1:] + curve[:-1])
    expected = seg[mid[:, 0] > 0.8].sum() / seg.sum()
    observed = np.mean(mu.points[:, 0] > 0.8)
    sigma = np.sqrt(expected * (1 - expected) / mu.size)
    assert abs(observed - expected) < 4 * sigma


def test_lemniscate_seeded():
    a = lemniscate_dataset(100, seed=5)
    b = lemniscate_dataset(100, seed=5)
    np.testing.assert_array_equal(a.points, b.points)


def test_monotone_chain_square_with_interior():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5], [0.5, 0.0]])
    hull = monotone_chain(pts)
    assert set(hull.tolist()) == {0, 1, 2, 3}
    # counter-clockwise: positive signed area
    v = pts[hull]
    area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
    assert area > 0


def test_monotone_chain_collinear():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    assert sorted(monotone_chain(pts).tolist()) == [0, 2]


def test_support_geometry_dims():
    g1 = support_geometry(fig1_measure())
    assert g1.radius == 5.0
    np.testing.assert_array_equal(np.sort(g1.hull_vertices[:, 0]), [-5.0, 5.0])
    g2 = support_geometry(two_dirac_measure())
    assert g2.hull_vertices.shape == (2, 2)


def test_support_geometry_3d_drops_interior():
    cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    pts = np.vstack([cube, [[0.5, 0.5, 0.5], [0.2, 0.3, 0.4]]])
    g = support_geometry(make_empirical(pts))
    assert g.hull_vertices.shape == (8, 3)

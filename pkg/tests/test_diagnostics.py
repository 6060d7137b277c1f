import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from scoreflow import diagnostics as dg
from scoreflow.measures import fig1_measure, make_empirical, support_geometry, two_dirac_measure
from scoreflow.reverse import Trajectory, integrate_ode, make_schedule, run_ensemble
from scoreflow.score import empirical_field

PM1 = make_empirical([-1.0, 1.0])


def test_dist_to_support():
    assert dg.dist_to_support(PM1, 1.0) == 0.0
    assert dg.dist_to_support(PM1, 0.0) == 1.0
    rng = np.random.default_rng(42)
    mu = make_empirical(rng.normal(size=(50, 3)))
    x = rng.normal(size=(20, 3)) * 2
    brute = np.min(np.linalg.norm(x[:, None] - mu.points[None], axis=2), axis=1)
    np.testing.assert_allclose(dg.dist_to_support(mu, x), brute, rtol=1e-14)


def test_dist_to_hull_2d():
    geom = support_geometry(two_dirac_measure())
    assert dg.dist_to_hull(geom, [0.0, 2.0]) == 2.0
    assert dg.dist_to_hull(geom, [0.5, 0.0]) == 0.0
    sq = support_geometry(make_empirical([[0, 0], [2, 0], [2, 2], [0, 2]]))
    np.testing.assert_allclose(dg.dist_to_hull(sq, [[1, 1], [3, 1], [3, 3]]), [0, 1, np.sqrt(2)])


def _in_hull(vertices, x):
    n = vertices.shape[0]
    res = linprog(np.zeros(n), A_eq=np.vstack([vertices.T, np.ones(n)]), b_eq=np.append(x, 1.0),
                  bounds=[(0, None)] * n)
    return res.status == 0


def test_dist_to_hull_3d_against_sampling_oracle():
    rng = np.random.default_rng(42)
    verts = rng.normal(size=(6, 3))
    geom = support_geometry(make_empirical(verts))
    x = np.array([2.0, -1.5, 1.0])
    d = dg.dist_to_hull(geom, x)
    # dense convex combinations approach the projection from above
    lam = rng.dirichlet(np.full(6, 0.05), size=400_000)
    lam = np.vstack([lam, np.eye(6)])
    sampled = np.min(np.linalg.norm(lam @ verts - x, axis=1))
    assert d <= sampled + 1e-8
    assert sampled - d <= 1e-2
    assert dg.dist_to_hull(geom, verts.mean(0)) <= 1e-8
    assert _in_hull(verts, verts.mean(0))


def test_hull_distance_matches_projection_qp():
    rng = np.random.default_rng(7)
    verts = rng.normal(size=(8, 4))
    x = rng.normal(size=4) * 3
    from scipy.optimize import minimize

    res = minimize(lambda w: np.sum((w @ verts - x) ** 2), np.full(8, 1 / 8), method="SLSQP",
                   bounds=[(0, 1)] * 8, constraints={"type": "eq", "fun": lambda w: w.sum() - 1},
                   options={"ftol": 1e-15, "maxiter": 500})
    assert abs(dg.hull_distance_points(verts, x) - np.sqrt(res.fun)) <= 1e-6


def test_hull_rate_check_examples():
    geom = support_geometry(PM1)
    sf = empirical_field(PM1)
    sched = make_schedule(1.0, 1e-4, 80)
    rep = dg.hull_rate_check(integrate_ode(sf, [3.0], sched), geom)
    assert rep.passed
    assert np.all(rep.distances <= 2 * np.sqrt(sched.nodes) + rep.slack)
    inside = dg.hull_rate_check(integrate_ode(sf, [0.4], sched), geom)
    assert inside.passed and inside.distances.max() <= inside.slack
    y = make_empirical([[2.0]])
    exact = dg.hull_rate_check(integrate_ode(empirical_field(y), [5.0], sched), support_geometry(y))
    np.testing.assert_allclose(exact.distances, exact.bounds, rtol=1e-6)


def test_fit_rate_closed_form():
    sched = make_schedule(4.0, 1e-6, 200)
    y, x_T = 1.0, 4.0
    states = (y + (x_T - y) * np.sqrt(sched.nodes / 4.0))[:, None]
    fit = dg.fit_rate(Trajectory(sched.nodes, states, 0.0), [y])
    assert abs(fit.alpha - 0.5) <= 1e-3
    assert abs(fit.C - abs(x_T - y) / 2.0) <= 1e-3


def test_fit_rate_errors():
    sched = make_schedule(1.0, 1e-3, 40)
    states = np.zeros((41, 1))
    with pytest.raises(dg.ExactHit):
        dg.fit_rate(Trajectory(sched.nodes, states, 0.0), [0.0])
    with pytest.raises(ValueError):
        dg.fit_rate(Trajectory(sched.nodes[:5], np.ones((5, 1)), 0.0), [0.0])


def test_fit_rate_fig1_generic():
    traj = integrate_ode(empirical_field(fig1_measure()), [1.7], make_schedule(1.0, 1e-6, 240))
    i = dg.nearest_atom(fig1_measure(), traj.terminal)
    alpha, _ = dg.fit_rate(traj, fig1_measure().points[i])
    assert 0.45 <= alpha <= 0.55


def test_separatrix_rate():
    traj = integrate_ode(empirical_field(two_dirac_measure()), [0.0, 2.0], make_schedule(1.0, 1e-8, 200))
    alpha, _ = dg.fit_rate(traj, [0.0, 0.0])
    assert abs(alpha - 0.5) <= 0.05


def test_voronoi_core_examples():
    i = 1  # atom at +1
    vc = dg.voronoi_core(PM1, i)
    assert vc.gamma == 2.0
    assert vc.C_i == 2.0
    assert dg.membership(vc, PM1, 1.0)
    assert not dg.membership(vc, PM1, 0.0)
    classical = dg.voronoi_core(PM1, i, gamma=0.0)
    assert dg.membership(classical, PM1, 1e-12) and not dg.membership(classical, PM1, -1e-12)
    single = dg.voronoi_core(make_empirical([0.0]), 0)
    assert math.isinf(single.gamma) and dg.membership(single, make_empirical([0.0]), 100.0)
    with pytest.raises(IndexError):
        dg.voronoi_core(PM1, 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(-6, 6), st.floats(1e-3, 1.0))
def test_mean_shift_bound_fig1(x, t):
    mu = fig1_measure()
    for i in range(3):
        vc = dg.voronoi_core(mu, i)
        if dg.membership(vc, mu, x):
            gap, bound = dg.mean_shift_gap(mu, vc, x, t)
            assert gap <= bound + 1e-12


def test_claim2_examples():
    sched = make_schedule(1.0, 1e-6, 240)
    single = make_empirical([[0.0]])
    rep = dg.claim2_invariance_check(integrate_ode(empirical_field(single), [2.0], sched), single)
    assert rep.member.all() and rep.holds
    mu = fig1_measure()
    rep = dg.claim2_invariance_check(integrate_ode(empirical_field(mu), [-6.0], sched), mu)
    assert rep.index == 0 and rep.entered and rep.holds
    assert rep.member[np.flatnonzero(rep.member)[0]:].all()
    traj = integrate_ode(empirical_field(PM1), [0.0], sched)
    assert dg.on_bisector(PM1, traj.states[0])
    rep = dg.claim2_invariance_check(traj, PM1)
    assert not rep.entered and rep.first_entry_time is None
    np.testing.assert_allclose(traj.terminal, [0.0], atol=1e-12)


def test_neighborhood_mass():
    sf = empirical_field(PM1)
    ens = run_ensemble(sf, {"gaussian": {"mean": [0.0], "sigma": 2.0}}, make_schedule(1.0, 1e-4, 60), 0.0, 200,
                       seed=42, method="ode")
    assert dg.neighborhood_mass(ens, PM1, math.inf) == 1.0
    fracs = [dg.neighborhood_mass(ens, PM1, d) for d in (1.0, 0.1, 0.01)]
    assert fracs[0] >= fracs[1] >= fracs[2]
    # every generic path lands within 2 C sqrt(t_min) of an atom
    for traj in ens:
        i = dg.nearest_atom(PM1, traj.terminal)
        _, c = dg.fit_rate(traj, PM1.points[i])
        assert dg.dist_to_support(PM1, traj.terminal) <= 2 * c * math.sqrt(1e-4)
    with pytest.raises(ValueError):
        dg.neighborhood_mass(ens, PM1, 0.0)


def test_ou_transform():
    x, t = dg.ou_to_heat(np.array([0.3, -1.0]), 0.0)
    assert t == 0.0
    np.testing.assert_array_equal(x, [0.3, -1.0])
    x, tau = dg.heat_to_ou(np.array([2.0]), 1.0)
    assert tau == pytest.approx(math.log(3) / 2, rel=1e-15)
    np.testing.assert_allclose(x, 2.0 / math.sqrt(3), rtol=1e-15)
    with pytest.raises(ValueError):
        dg.ou_to_heat(1.0, -0.1)
    with pytest.raises(ValueError):
        dg.heat_to_ou(1.0, -0.1)


def test_ou_dirac_maps_to_heat_kernel():
    # OU from a Dirac at y: mean y e^{-tau}, variance 1 - e^{-2 tau} per axis;
    # in heat coordinates this is N(y, 2t)
    y, tau = 1.3, 0.7
    x_mean, t = dg.ou_to_heat(y * math.exp(-tau), tau)
    scale = math.exp(tau)
    assert x_mean == pytest.approx(y)
    assert (1 - math.exp(-2 * tau)) * scale**2 == pytest.approx(2 * t)


@pytest.mark.parametrize("gamma", [1e-2, 0.5, 2.0, 40.0])
def test_gamma_integral(gamma):
    q, c = dg.gamma_integral(gamma)
    assert abs(q - c) <= 1e-8


def test_diagnostics_csv(tmp_path):
    mu = fig1_measure()
    geom = support_geometry(mu)
    traj = integrate_ode(empirical_field(mu), [6.0], make_schedule(1.0, 1e-6, 240))
    rec = dg.trajectory_diagnostics(traj, mu, geom)
    assert rec.limit_index == 2 and abs(rec.alpha - 0.5) < 1e-3
    dg.write_diagnostics_csv([rec], tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "xT1,limit_index,alpha,C,worst_hull_violation,core_entry_time"

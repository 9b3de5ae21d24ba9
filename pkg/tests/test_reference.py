import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from netadmm.dladmm import init_state
from netadmm.graph import build_topology, network_from_edges
from netadmm.problem import ProblemInstance, ZeroLinkCost, quadratic_link_cost, quadratic_node_cost
from netadmm.reference import (
    ReferenceSolveError,
    kkt_residuals,
    lambda_dist,
    lambda_norm,
    load_optimal_point,
    save_optimal_point,
    solve_reference,
)


def _two_node(a, beta):
    costs = [quadratic_node_cost([[1.0]], [-a[0]]), quadratic_node_cost([[1.0]], [-a[1]])]
    return ProblemInstance.uniform_links(network_from_edges(2, [(0, 1)]), 1, costs, quadratic_link_cost(beta))


def _independent_grad(inst, x):
    """Gradient of the network cost assembled loop by loop from raw data."""
    g = np.zeros_like(x)
    for i, o in enumerate(inst.node_costs):
        s = o.labels[:, None] * o.features
        g[i] = -(expit(-(s @ x[i])) @ s)
    for (i, j), o in zip(inst.network.directed_links, inst.link_costs):
        d = 2.0 * o.beta_reg * (x[i] - x[j])
        g[i] += d
        g[j] -= d
    return g


def test_identity_without_links_is_zero():
    net = build_topology("line", 4)
    inst = ProblemInstance.uniform_links(net, 3, [quadratic_node_cost(np.eye(3), np.zeros(3))] * 4, ZeroLinkCost())
    opt = solve_reference(inst)
    assert np.abs(opt.x_star).max() <= 1e-12
    assert np.abs(opt.alpha_star).max() == 0.0


def test_two_node_closed_form():
    a, beta = np.array([1.0, -2.0]), 0.5
    # both directed links contribute beta (x0 - x1)^2
    A = np.array([[1 + 4 * beta, -4 * beta], [-4 * beta, 1 + 4 * beta]])
    opt = solve_reference(_two_node(a, beta))
    np.testing.assert_allclose(opt.x_star.ravel(), np.linalg.solve(A, a), atol=1e-10)


def test_strong_coupling_pulls_to_average():
    a = np.array([1.0, -2.0])
    gaps = [np.ptp(solve_reference(_two_node(a, beta)).x_star) for beta in (0.1, 1.0, 10.0, 100.0)]
    assert all(g1 > g2 for g1, g2 in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.01


@pytest.fixture(scope="module")
def scenario_opt(scenario_i):
    return solve_reference(scenario_i)


def test_scenario_stationarity(scenario_i, scenario_opt):
    g = _independent_grad(scenario_i, scenario_opt.x_star)
    assert np.linalg.norm(g) <= 1e-9
    assert scenario_opt.grad_norm_at_solution <= 1e-10


def test_scenario_kkt(scenario_i, scenario_opt):
    r1, r2, r3 = scenario_opt.kkt
    assert r1 <= 1e-9 and r2 <= 1e-12 and r3 <= 1e-12
    np.testing.assert_allclose(
        kkt_residuals(scenario_i, scenario_i.constraint_matrices(), scenario_opt.stacked()), scenario_opt.kkt
    )


def test_kkt_at_zero_state(scenario_i):
    r1, r2, r3 = kkt_residuals(scenario_i, scenario_i.constraint_matrices(), init_state(scenario_i))
    assert r1 == pytest.approx(np.linalg.norm(scenario_i.grad_f(np.zeros((scenario_i.n, scenario_i.p)))))
    assert r2 == 0.0 and r3 == 0.0


def test_tighter_tolerance_is_stable(scenario_i, scenario_opt):
    tighter = solve_reference(scenario_i, tol=1e-11)
    assert np.abs(tighter.x_star - scenario_opt.x_star).max() <= 1e-8


def test_iteration_cap_raises(scenario_i):
    with pytest.raises(ReferenceSolveError) as err:
        solve_reference(scenario_i, max_iters=3)
    assert err.value.best.shape == (scenario_i.n, scenario_i.p)
    assert err.value.grad_norm > 1e-10


def test_save_load_round_trip(tmp_path, scenario_opt):
    path = tmp_path / "opt.json"
    save_optimal_point(scenario_opt, path)
    back = load_optimal_point(path)
    assert np.array_equal(back.stacked(), scenario_opt.stacked())
    assert back.kkt == scenario_opt.kkt
    assert back.grad_norm_at_solution == scenario_opt.grad_norm_at_solution


class TestLambdaNorm:
    def test_weights(self):
        # x block of 1, w of 1, alpha of 1
        assert lambda_norm(4.0, 2.0, [1.0, 0.0, 0.0], [0.0] * 3, 1) == pytest.approx(np.sqrt(2.0))
        assert lambda_norm(4.0, 2.0, [0.0, 1.0, 0.0], [0.0] * 3, 1) == pytest.approx(np.sqrt(3.0))
        assert lambda_norm(4.0, 2.0, [0.0, 0.0, 1.0], [0.0] * 3, 1) == pytest.approx(0.5)

    def test_bad_split(self):
        with pytest.raises(ValueError):
            lambda_norm(1.0, 1.0, np.zeros(4), np.zeros(4), 1)
        with pytest.raises(ValueError):
            lambda_norm(0.0, 1.0, np.zeros(3), np.zeros(3), 1)

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(0.1, 100.0),
        st.floats(0.1, 100.0),
        st.integers(0, 2**31 - 1),
        st.floats(-10.0, 10.0),
    )
    def test_norm_axioms(self, c, rho, seed, scale):
        r = np.random.default_rng(seed)
        u, v, ref = r.standard_normal((3, 11))
        n = lambda a: lambda_norm(c, rho, a, ref, 3)
        d = lambda a, b: lambda_norm(c, rho, a, b, 3)
        assert d(u, u) == 0.0
        assert d(u, v) == pytest.approx(d(v, u))
        assert d(u, v) <= d(u, ref) + n(v) + 1e-12
        assert d(ref + scale * (u - ref), ref) == pytest.approx(abs(scale) * n(u), rel=1e-12, abs=1e-12)

    def test_lambda_dist_at_optimum(self, scenario_opt):
        assert lambda_dist(scenario_opt.as_state(), scenario_opt, 3.0, 50.0) == 0.0

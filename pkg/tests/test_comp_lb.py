import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from globe_mec.comp_lb import (DualState, comp_coefficients, dual_steps, dual_update,
                               inner_objective, inner_subproblem, kkt_residuals,
                               solve_centralized, solve_distributed, solve_qp_reference)
from globe_mec.model import DualSettings, SlotObservation, make_params

from conftest import random_observation, ring_network
from oracles import inner_grid_oracle


# --- one user -----------------------------------------------------------------

def test_budget_binding_water_level():
    # eps*c = (4, 2) exceeds lam = 3, so nu = 1.5 and beta = (2.5, 0.5)
    beta = inner_subproblem([4.0, 2.0], 3.0, 1.0)
    assert np.allclose(beta, [2.5, 0.5], atol=1e-12)


def test_budget_binding_matches_fine_grid():
    b1 = np.linspace(0, 3, 3001)
    B1, B2 = np.meshgrid(b1, b1, indexing="ij")
    ok = B1 + B2 <= 3 + 1e-12
    obj = np.where(ok, 4 * B1 + 2 * B2 - (B1**2 + B2**2) / 2, -np.inf)
    best = obj.max()
    got = inner_objective([4.0, 2.0], inner_subproblem([4.0, 2.0], 3.0, 1.0), 1.0)
    assert best - 1e-5 <= got <= best + 1e-5
    k = np.unravel_index(obj.argmax(), obj.shape)
    assert (b1[k[0]], b1[k[1]]) == pytest.approx((2.5, 0.5), abs=1e-3)


def test_nonpositive_coefficients_give_zero():
    assert not inner_subproblem([-1.0, 0.0, -3.0], 5.0, 2.0).any()


def test_interior_optimum_when_budget_slack():
    assert np.allclose(inner_subproblem([1.0], 10.0, 1.0), [1.0])


def test_inner_rejects_bad_arguments():
    with pytest.raises(ValueError):
        inner_subproblem([1.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        inner_subproblem([1.0], -1.0, 1.0)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 3))
def test_inner_beats_grid_and_satisfies_kkt(seed, m):
    rng = np.random.default_rng(seed)
    c = rng.uniform(-2, 5, m)
    lam = rng.uniform(0, 10)
    eps = 10 ** rng.uniform(-1, 1)
    beta = inner_subproblem(c, lam, eps)
    best, bound = inner_grid_oracle(c, lam, eps, n=40)
    assert inner_objective(c, beta, eps) >= best - 1e-12
    assert inner_objective(c, beta, eps) <= best + bound
    assert kkt_residuals(c, lam, eps, beta) <= 1e-8


# --- dual step ----------------------------------------------------------------

def test_dual_update_arithmetic():
    assert dual_update(2.0, 0.5, 10.0, 14.0) == pytest.approx(4.0)
    assert dual_update(1.0, 0.5, 10.0, 6.0) == 0.0
    assert dual_update(3.0, 0.5, 10.0, 10.0) == 3.0


def test_dual_steps_scale_with_contention():
    cand = np.array([[True, True], [True, False], [True, False]])
    assert np.allclose(dual_steps(cand, 2.0), [1 / 6, 1 / 2])


# --- the coupled problem --------------------------------------------------------

def _instance(rng, n_bs=5, V=100.0, bt_range=(-1500.0, 0.0), **dual):
    net = ring_network(n_bs=n_bs, lambda_max=3000.0)
    obs = random_observation(rng, net)
    params = make_params(net, V, 1.0, 3.0, dual=DualSettings(**dual))
    bt = rng.uniform(*bt_range, n_bs)
    return net, obs, params, bt


def test_uncoupled_single_user_needs_one_iteration():
    net = ring_network(n_bs=1, neighbors=0, lambda_max=3000.0)
    obs = SlotObservation(np.zeros(1), np.array([500.0]), np.zeros(1), 1.0, np.ones((1, 1)))
    params = make_params(net, 1.0, 1.0, 1.0, epsilon=1.0)
    beta, rep = solve_distributed(net, np.array([0.0]), obs, params)
    assert rep.iterations == 1 and rep.converged
    assert rep.gamma[0] == 0.0
    assert beta[0, 0] == pytest.approx(0.01)   # eps * V c_com
    ref, q, _ = solve_centralized(net, np.array([0.0]), obs, params)
    assert ref[0, 0] == pytest.approx(beta[0, 0], rel=1e-6)


def test_two_bs_binding_capacity_matches_centralized():
    net = ring_network(n_bs=2, lambda_max=3000.0)
    obs = SlotObservation(np.zeros(2), np.array([2500.0, 2200.0]), np.zeros(2), 1.0,
                          np.ones((2, 2)))
    params = make_params(net, 100.0, 1.0, 1.0)
    bt = np.array([-100.0, -400.0])
    beta, rep = solve_distributed(net, bt, obs, params)
    assert rep.converged
    assert np.all(beta.sum(axis=0) <= net.capacity * (1 + 1e-9))
    _, q, _ = solve_centralized(net, bt, obs, params)
    assert rep.qp_objective == pytest.approx(q, rel=5e-3)


def test_deeply_depleted_batteries_serve_nothing():
    rng = np.random.default_rng(2)
    net, obs, params, _ = _instance(rng)
    beta, rep = solve_distributed(net, np.full(5, -1e6), obs, params)
    assert not beta.any() and rep.converged and rep.iterations == 1


def test_centralized_uncoupled_equals_closed_form():
    rng = np.random.default_rng(3)
    net = ring_network(n_bs=3, users_per_bs=1, neighbors=1, lambda_max=3000.0)
    obs = random_observation(rng, net)
    obs = SlotObservation(obs.tx_demand, np.array([50.0, 80.0, 20.0]), obs.harvest,
                          obs.price, obs.tx_energy)
    params = make_params(net, 100.0, 1.0, 3.0, epsilon=100.0)
    bt = np.array([-10.0, 20.0, 5.0])
    beta, _, _ = solve_centralized(net, bt, obs, params)
    coef = comp_coefficients(net, bt, params.V)
    for u in range(3):
        want = inner_subproblem(coef[u], obs.comp_demand[u], params.epsilon)
        assert np.allclose(beta[u], want, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_centralized_not_worse_than_distributed(seed):
    rng = np.random.default_rng(100 + seed)
    net, obs, params, bt = _instance(rng, n_bs=3)
    _, rep = solve_distributed(net, bt, obs, params)
    _, q, _ = solve_centralized(net, bt, obs, params)
    assert q >= rep.qp_objective - 5e-3 * abs(rep.qp_objective)


def test_lp_objective_stabilizes_as_regularization_vanishes():
    rng = np.random.default_rng(7)
    net, obs, params, bt = _instance(rng, n_bs=3)
    base = comp_coefficients(net, bt, params.V)
    lp = []
    for eps in (1e5, 1e6, 1e7):
        _, _, v = solve_qp_reference(base, net.candidates, obs.comp_demand, net.capacity, eps)
        lp.append(v)
    assert lp[0] <= lp[1] * (1 + 1e-7) and lp[1] <= lp[2] * (1 + 1e-7)
    assert abs(lp[2] - lp[1]) <= abs(lp[1] - lp[0]) + 1e-6 * abs(lp[2])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_distributed_output_always_feasible(seed):
    rng = np.random.default_rng(seed)
    net, obs, params, bt = _instance(rng, max_iter=50)
    beta, rep = solve_distributed(net, bt, obs, params)
    assert np.all(beta >= 0) and np.all(beta[~net.candidates] == 0)
    assert np.all(beta.sum(axis=1) <= obs.comp_demand * (1 + 1e-12) + 1e-9)
    assert np.all(beta.sum(axis=0) <= net.capacity * (1 + 1e-12))


@pytest.mark.parametrize("schedule", ["constant", "diminishing", "accelerated"])
def test_every_schedule_solves_a_well_conditioned_instance(schedule):
    net = ring_network(n_bs=2, lambda_max=3000.0)
    obs = SlotObservation(np.zeros(2), np.array([2600.0, 900.0]), np.zeros(2), 1.0,
                          np.ones((2, 2)))
    params = make_params(net, 100.0, 1.0, 1.0, epsilon=1e3,
                         dual=DualSettings(schedule=schedule, max_iter=20000))
    bt = np.array([-100.0, -300.0])
    _, rep = solve_distributed(net, bt, obs, params)
    _, q, _ = solve_centralized(net, bt, obs, params)
    assert rep.converged
    assert rep.qp_objective == pytest.approx(q, rel=1e-4)


def test_accelerated_converges_where_plain_steps_stall():
    counts = {}
    for schedule in ("constant", "accelerated"):
        r = np.random.default_rng(0)
        ok = 0
        for _ in range(10):
            net, obs, params, bt = _instance(r, schedule=schedule)
            ok += solve_distributed(net, bt, obs, params)[1].converged
        counts[schedule] = ok
    assert counts["accelerated"] == 10
    assert counts["constant"] < counts["accelerated"]


def test_record_history_rows():
    rng = np.random.default_rng(4)
    net, obs, params, bt = _instance(rng)
    _, rep = solve_distributed(net, bt, obs, params, record=True)
    assert rep.history.shape == (rep.iterations, net.n_bs + 1)
    assert np.array_equal(rep.history[0, :net.n_bs], np.zeros(net.n_bs))
    assert rep.history[-1, -1] <= 1e-6 * net.capacity.max()


# --- warm starts ----------------------------------------------------------------

def test_warm_start_carries_multipliers_and_battery():
    rng = np.random.default_rng(5)
    net, obs, params, bt = _instance(rng)
    state = DualState.zeros(net.n_bs)
    _, rep = solve_distributed(net, bt, obs, params, state)
    assert np.array_equal(state.gamma, rep.gamma)
    assert np.array_equal(state.b_tilde, bt)
    # the same problem again from its own optimum stops immediately
    _, again = solve_distributed(net, bt, obs, params, state)
    assert again.iterations <= 2


def test_warm_shift_keeps_effective_price_of_saturated_bs():
    rng = np.random.default_rng(6)
    net, obs, params, bt = _instance(rng)
    state = DualState.zeros(net.n_bs)
    solve_distributed(net, bt, obs, params, state)
    g0 = state.gamma.copy()
    bt2 = bt + rng.uniform(-5, 5, net.n_bs)
    coef0 = comp_coefficients(net, bt, params.V)
    coef1 = comp_coefficients(net, bt2, params.V)
    params1 = make_params(net, params.V, 1.0, 3.0, dual=DualSettings(max_iter=1))
    s1 = DualState(g0.copy(), b_tilde=bt.copy())
    _, rep = solve_distributed(net, bt2, obs, params1, s1)
    pos = (g0 > 0) & (rep.gamma > 0)
    assert pos.any()
    assert np.allclose((coef1 - rep.gamma)[:, pos], (coef0 - g0)[:, pos], rtol=0, atol=1e-12)


def test_warm_start_cuts_iterations_on_slowly_changing_batteries():
    rng = np.random.default_rng(8)
    net, obs, params, bt = _instance(rng, bt_range=(-300.0, 0.0))
    lam = rng.uniform(1500, 2500, net.n_users)
    state = DualState.zeros(net.n_bs)
    cold, warm = [], []
    for k in range(20):
        bt = bt + rng.uniform(-3, 3, net.n_bs)
        lam = np.clip(lam + rng.normal(0, 20, net.n_users), 0, 3000)
        obs = SlotObservation(obs.tx_demand, lam, obs.harvest, obs.price, obs.tx_energy)
        cold.append(solve_distributed(net, bt, obs, params)[1].iterations)
        warm.append(solve_distributed(net, bt, obs, params, state)[1].iterations)
    assert np.median(warm[1:]) < np.median(cold[1:])


def test_warm_start_disabled_ignores_state():
    rng = np.random.default_rng(9)
    net, obs, params, bt = _instance(rng, warm_start=False)
    state = DualState(np.full(net.n_bs, 5.0))
    _, a = solve_distributed(net, bt, obs, params, state)
    _, b = solve_distributed(net, bt, obs, params, None)
    assert a.iterations == b.iterations

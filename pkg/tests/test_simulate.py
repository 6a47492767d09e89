from __future__ import annotations

import numpy as np
import pytest

from conftest import make_random_problem
from graphonlq.control import AffinePolicy, InitialCondition, solve_mean_flow
from graphonlq.grid import build_grid
from graphonlq.kernels import Kernel, symmetrize, zero_kernel
from graphonlq.model import CoefficientField, ProblemData, coefficients_from_scalars, from_centered
from graphonlq.pipeline import solve_system
from graphonlq.simulate import (
    check_fundamental_relation,
    evaluate_cost,
    pathwise_centered_costs,
    pathwise_standard_costs,
    simulate,
    simulate_particles,
)
from graphonlq.timegrid import TimeGrid


def scalar_problem(n=1, T=1.0, **scalars):
    grid = build_grid(n)
    coeffs = coefficients_from_scalars(n, **scalars)
    zk = zero_kernel(grid, 1)
    return ProblemData(grid=grid, coeffs=coeffs, G_A=zk, G_C=zk, G_Q=zk, G_H=zk, t0=0.0, T=T)


# ---------------------------------------------------------------- dynamics

def test_zero_dynamics_paths_frozen():
    p = scalar_problem(n=2, a=0.0, b=0.0, q=0.0, r=1.0, h=0.0)
    tg = TimeGrid(0.0, 1.0, 20)
    law = AffinePolicy.zero(p, tg)
    init = InitialCondition.deterministic(np.array([[0.3], [-1.2]]))
    flow = solve_mean_flow(p, law, init, tg)
    ens = simulate(p, law, flow, init, M=16, seed=7, store_paths=True)
    assert np.all(ens.states[:, :, 0, :] == ens.states[:, :, -1, :])
    assert np.all(ens.terminal_states[0] == 0.3)


def test_brownian_variance():
    gamma = 0.8
    p = scalar_problem(n=1, a=0.0, b=0.0, q=0.0, r=1.0, h=0.0, gamma=gamma)
    tg = TimeGrid(0.0, 1.0, 100)
    law = AffinePolicy.zero(p, tg)
    init = InitialCondition.deterministic(np.array([[0.0]]))
    flow = solve_mean_flow(p, law, init, tg)
    M = 10_000
    ens = simulate(p, law, flow, init, M=M, seed=11)
    var = ens.terminal_states[0, :, 0].var(ddof=1)
    target = gamma**2
    stderr = target * np.sqrt(2.0 / (M - 1))
    assert abs(var - target) < 4 * stderr


def test_empirical_means_match_flow():
    p = make_random_problem(21, n=3, with_offsets=True)
    tg = TimeGrid(0.0, 1.0, 100)
    sol = solve_system(p, tg)
    init = InitialCondition.gaussian(np.full((3, 1), 0.4), np.full((3, 1, 1), 0.09))
    flow = solve_mean_flow(p, sol.law, init, tg)
    M = 10_000
    ens = simulate(p, sol.law, flow, init, M=M, seed=3)
    std = ens.std_path()
    for k in range(0, 101, 20):
        dev = np.abs(ens.mean_path[k] - flow.states[k])
        bound = 4.0 * std[k] / np.sqrt(M) + 1e-12
        assert np.all(dev <= bound + 5e-3 * np.abs(flow.states[k]))


def test_simulation_deterministic_and_thread_invariant():
    p = make_random_problem(5, n=4, with_offsets=True)
    tg = TimeGrid(0.0, 1.0, 50)
    sol = solve_system(p, tg)
    init = InitialCondition.deterministic(np.full((4, 1), 0.2))
    flow = solve_mean_flow(p, sol.law, init, tg)
    runs = [simulate(p, sol.law, flow, init, M=64, seed=42,
                     reference=(sol.law, sol.O_path), threads=t) for t in (1, 2, 8)]
    for other in runs[1:]:
        assert np.array_equal(runs[0].terminal_states, other.terminal_states)
        assert np.array_equal(runs[0].run_cost, other.run_cost)
        assert np.array_equal(runs[0].penalty, other.penalty)
    again = simulate(p, sol.law, flow, init, M=64, seed=42, reference=(sol.law, sol.O_path))
    assert np.array_equal(runs[0].terminal_states, again.terminal_states)


# ---------------------------------------------------------------- costs

def test_cost_of_frozen_state():
    # zero dynamics and law: J = q x^2 tau + h x^2 exactly, no variance
    q, h, x, tau = 1.5, 0.5, 0.8, 1.0
    p = scalar_problem(n=3, a=0.0, b=0.0, q=q, r=1.0, h=h)
    tg = TimeGrid(0.0, tau, 40)
    law = AffinePolicy.zero(p, tg)
    init = InitialCondition.deterministic(np.full((3, 1), x))
    flow = solve_mean_flow(p, law, init, tg)
    ens = simulate(p, law, flow, init, M=8, seed=0)
    est = evaluate_cost(p, ens, flow, tg)
    assert est.value == pytest.approx(q * x * x * tau + h * x * x, rel=1e-12)
    assert est.stderr == pytest.approx(0.0, abs=1e-14)


def test_cost_nonnegative_on_validated_problem():
    p = make_random_problem(31, n=3, with_offsets=True)
    tg = TimeGrid(0.0, 1.0, 80)
    sol = solve_system(p, tg)
    init = InitialCondition.gaussian(np.zeros((3, 1)), np.full((3, 1, 1), 0.25))
    for policy in (sol.law, AffinePolicy.zero(p, tg), sol.law.shifted(0.4)):
        flow = solve_mean_flow(p, policy, init, tg)
        ens = simulate(p, policy, flow, init, M=500, seed=9)
        est = evaluate_cost(p, ens, flow, tg)
        assert est.value >= -3 * est.stderr


@pytest.mark.parametrize("seed", range(4))
def test_centered_vs_standard_pathwise(seed):
    # each trajectory serves as its own mean field: the centered rewrite is
    # then an exact algebraic identity, path by path
    rng = np.random.default_rng(seed)
    n, d = 3, 2
    grid = build_grid(n)
    Gt = symmetrize(Kernel(grid, rng.standard_normal((n, n, d, d))))
    Qs = rng.standard_normal((n, d, d))
    Q = np.einsum("iab,icb->iac", Qs, Qs)
    Hs = rng.standard_normal((n, d, d))
    H = 0.5 * np.einsum("iab,icb->iac", Hs, Hs)
    coeffs = CoefficientField(
        A=0.3 * rng.standard_normal((n, d, d)), B=rng.standard_normal((n, d, 1)),
        C=0.2 * rng.standard_normal((n, d, d)), D=0.2 * rng.standard_normal((n, d, 1)),
        Q=Q, R=np.ones((n, 1, 1)), H=H,
        beta=rng.standard_normal((n, d)), gamma=0.4 * rng.standard_normal((n, d)))
    p = from_centered(Gt, Gt, coeffs, grid, G_A=Kernel(grid, 0.3 * rng.standard_normal((n, n, d, d))))
    tg = TimeGrid(0.0, 1.0, 30)
    policy = AffinePolicy.zero(p, tg).shifted(0.3)
    init = InitialCondition.gaussian(rng.standard_normal((n, d)), np.tile(0.2 * np.eye(d), (n, 1, 1)))
    flow = solve_mean_flow(p, policy, init, tg)
    ens = simulate(p, policy, flow, init, M=5, seed=seed, store_paths=True)
    std_costs = pathwise_standard_costs(p, ens)
    cen_costs = pathwise_centered_costs(ens, Gt, Gt, coeffs, grid)
    scale = np.maximum(np.abs(cen_costs), 1e-12)
    assert np.max(np.abs(std_costs - cen_costs) / scale) < 1e-10


# ---------------------------------------------------------------- certification

def test_fundamental_relation_deterministic_analytic_case():
    """a=0, b=1, beta=1, q=0, r=1, h=1: V(0, x) = (x+1)^2/2; noise-free,
    so one simulated path of the optimal law must realize J = V up to the
    Euler bias."""
    p = scalar_problem(a=0.0, b=1.0, q=0.0, r=1.0, h=1.0, beta=1.0)
    tg = TimeGrid(0.0, 1.0, 1000)
    sol = solve_system(p, tg)
    x0 = 0.5
    init = InitialCondition.deterministic(np.array([[x0]]))
    rep = check_fundamental_relation(p, sol, sol.law, init, M=1, seed=0, label="optimal")
    V_exact = (x0 + 1.0) ** 2 / 2.0
    assert rep.V == pytest.approx(V_exact, abs=1e-8)
    assert abs(rep.gap) < 5e-3 * V_exact
    assert rep.penalty < 1e-10


def test_fundamental_relation_random_problem_with_offsets():
    p = make_random_problem(2, n=3, with_offsets=True)
    tg = TimeGrid(0.0, 1.0, 250)
    sol = solve_system(p, tg)
    init = InitialCondition.gaussian(np.full((3, 1), 0.3), np.full((3, 1, 1), 0.04))
    M = 4000
    opt = check_fundamental_relation(p, sol, sol.law, init, M=M, seed=17, label="optimal")
    budget = 3 * opt.stderr + 0.02 * abs(opt.V)
    assert abs(opt.gap) <= budget
    assert opt.penalty <= 0.01 * abs(opt.V)
    for i, policy in enumerate([sol.law.shifted(0.5), sol.law.scaled_gains(1.3),
                                sol.law.without_mean_coupling()]):
        rep = check_fundamental_relation(p, sol, policy, init, M=M, seed=17, label=f"pert{i}")
        assert rep.gap >= -3 * rep.stderr
        resid_budget = 3 * rep.stderr_resid + 0.02 * abs(rep.V)
        assert abs(rep.gap_minus_penalty) <= resid_budget


def test_quadratic_gap_growth_in_shift():
    p = make_random_problem(4, n=2, with_offsets=False)
    tg = TimeGrid(0.0, 1.0, 200)
    sol = solve_system(p, tg)
    init = InitialCondition.deterministic(np.full((2, 1), 0.5))
    eps = 0.4
    rep1 = check_fundamental_relation(p, sol, sol.law.shifted(eps), init, M=3000, seed=5)
    rep2 = check_fundamental_relation(p, sol, sol.law.shifted(2 * eps), init, M=3000, seed=5)
    assert rep1.gap > 10 * rep1.stderr
    ratio = rep2.gap / rep1.gap
    assert 3.5 <= ratio <= 4.5
    # constant shifts make the penalty deterministic and exactly quadratic
    assert rep2.penalty == pytest.approx(4.0 * rep1.penalty, rel=1e-9)


def test_particle_mode_consistent_with_mean_flow():
    p = make_random_problem(6, n=3, with_offsets=False)
    tg = TimeGrid(0.0, 1.0, 100)
    sol = solve_system(p, tg)
    init = InitialCondition.gaussian(np.full((3, 1), 0.2), np.full((3, 1, 1), 0.04))
    flow = solve_mean_flow(p, sol.law, init, tg)
    M = 10_000
    part = simulate_particles(p, sol.law, init, M, seed=23, tg=tg)
    std = part.std_path()
    for k in range(0, 101, 25):
        dev = np.abs(part.mean_path[k] - flow.states[k])
        bound = 4.0 * std[k] / np.sqrt(M) + 5e-3 * np.maximum(np.abs(flow.states[k]), 0.1)
        assert np.all(dev <= bound)

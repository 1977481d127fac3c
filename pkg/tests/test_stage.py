"""Stage subproblem solves: optimality, cut validity, and tightness."""

from __future__ import annotations

import numpy as np
import pytest

from _corpus import four_kinds, kind_tolerance, tiny_instance
from risksddp.cuts import CutPool
from risksddp.risk import DiscreteDistribution, MeanAVaR
from risksddp.stage import StageWorkspace, solve_stage


def terminal_pool(problem) -> CutPool:
    return CutPool.from_affine(problem.terminal_cx, problem.terminal_c0)


def stage_objective(problem, t, x, risk, pool, u) -> float:
    """Independent evaluation of the stage objective at a fixed control."""
    reals = problem.realizations[t - 1]
    values = np.array([r.cost_value(x, u) + pool.value(r.next_state(x, u))
                       for r in reals])
    probs = np.array([r.prob for r in reals])
    return risk.evaluate(DiscreteDistribution.of(values, probs))


def random_feasible_controls(problem, t, x, rng, count):
    cs = problem.control_set(t)
    out = []
    while len(out) < count:
        u = rng.uniform(cs.lb, cs.ub)
        if cs.n_rows == 0 or np.all(cs.G_u @ u + cs.G_x @ x <= cs.h + 1e-12):
            out.append(u)
    return out


@pytest.mark.parametrize("index", [0, 3, 6, 9])
def test_stage_value_minimizes_objective(index):
    problem = tiny_instance(index)
    rng = np.random.default_rng(100 + index)
    for risk in four_kinds():
        tol = kind_tolerance(risk)
        pool = terminal_pool(problem)
        t = problem.stages
        lo, hi = problem.reach_boxes()[t - 1]
        for _ in range(3):
            x = rng.uniform(lo, hi)
            sol = solve_stage(problem, t, x, risk, pool, warm=False)
            # the solve must match its own control's objective ...
            own = stage_objective(problem, t, x, risk, pool, sol.u)
            assert sol.value == pytest.approx(own, abs=1e-4 * (1 + abs(own)))
            # ... and undercut every sampled feasible control
            for u in random_feasible_controls(problem, t, x, rng, 40):
                other = stage_objective(problem, t, x, risk, pool, u)
                assert sol.value <= other + tol * (1.0 + abs(other))


@pytest.mark.parametrize("index", [1, 4, 7, 10])
def test_cut_is_valid_lower_bound_and_tight(index):
    problem = tiny_instance(index)
    rng = np.random.default_rng(7 + index)
    for risk in four_kinds():
        tol = kind_tolerance(risk)
        pool = terminal_pool(problem)
        t = problem.stages
        lo, hi = problem.reach_boxes()[t - 1]
        x_hat = rng.uniform(lo, hi)
        sol = solve_stage(problem, t, x_hat, risk, pool, warm=False)
        # tight at the generating state
        assert sol.cut_value(x_hat) == pytest.approx(
            sol.value, abs=1e-6 * (1.0 + abs(sol.value)))
        # valid across the reach box
        for _ in range(12):
            x = rng.uniform(lo, hi)
            there = solve_stage(problem, t, x, risk, pool, warm=False)
            assert sol.cut_value(x) <= there.value + tol * (1.0 + abs(there.value))


def test_warm_and_canonical_agree_in_value():
    problem = tiny_instance(2)
    pool = terminal_pool(problem)
    t = problem.stages
    rng = np.random.default_rng(3)
    lo, hi = problem.reach_boxes()[t - 1]
    for risk in four_kinds():
        ws = StageWorkspace()
        for _ in range(6):
            x = rng.uniform(lo, hi)
            warm = solve_stage(problem, t, x, risk, pool, workspace=ws)
            cold = solve_stage(problem, t, x, risk, pool, warm=False)
            assert warm.value == pytest.approx(
                cold.value, abs=1e-4 * (1.0 + abs(cold.value)))


def test_mean_avar_theta_is_outcome_quantile():
    problem = tiny_instance(3)
    pool = terminal_pool(problem)
    t = problem.stages
    risk = MeanAVaR([0.5, 0.5], [0.4])
    rng = np.random.default_rng(17)
    lo, hi = problem.reach_boxes()[t - 1]
    for _ in range(5):
        x = rng.uniform(lo, hi)
        sol = solve_stage(problem, t, x, risk, pool, warm=False)
        reals = problem.realizations[t - 1]
        values = np.array([r.cost_value(x, sol.u) + pool.value(r.next_state(x, sol.u))
                           for r in reals])
        probs = np.array([r.prob for r in reals])
        d = DiscreteDistribution.of(values, probs)
        best = float(d.probs @ risk.values_at(d.values, risk.minimize_theta(d)))
        got = float(d.probs @ risk.values_at(d.values, sol.theta))
        assert got == pytest.approx(best, abs=1e-6 * (1.0 + abs(best)))


def test_growing_pool_monotone_values():
    # adding cuts can only raise the stage value at any state
    problem = tiny_instance(5)
    t = 1
    pool = CutPool(problem.state_dims[1])
    vlb = problem.value_lower_bounds()
    pool.add_constant(vlb[1])
    x = problem.initial_state
    rng = np.random.default_rng(23)
    for risk in four_kinds():
        seq = []
        pool_t = CutPool(problem.state_dims[1])
        pool_t.add_constant(vlb[1])
        for k in range(6):
            sol = solve_stage(problem, t, x, risk, pool_t, warm=False)
            seq.append(sol.value)
            g = rng.normal(scale=0.1, size=problem.state_dims[1])
            lo, hi = problem.reach_boxes()[1]
            worst = vlb[1] - float(np.abs(g) @ np.maximum(np.abs(lo), np.abs(hi)))
            pool_t.add(worst, g)  # stays a valid minorant, shifts the max
        for a, b in zip(seq, seq[1:]):
            assert b >= a - 1e-9 * (1.0 + abs(a))

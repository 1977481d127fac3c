"""Kernel-level tests: both simplex backends against scipy and each other."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from risksddp import _simplex_py, kernels
from risksddp.lp import (LPInfeasibleError, LPNumericalError,
                         LPUnboundedError, solve_lp)

scipy_opt = pytest.importorskip("scipy.optimize")

DATA = Path(__file__).parent / "data"

OPTIMAL, INFEASIBLE, UNBOUNDED = (kernels.OPTIMAL, kernels.INFEASIBLE,
                                  kernels.UNBOUNDED)


def random_standard_form(rng, m, n):
    """Random standard-form LP (min cx, Ax = b, x >= 0) with b >= 0."""
    A = rng.normal(size=(m, n))
    x_feas = rng.uniform(0.0, 1.0, size=n)
    b = A @ x_feas
    c = rng.normal(size=n)
    return A, b, c


def backends():
    out = [("python", _simplex_py.simplex_solve)]
    if kernels.BACKEND == "compiled":
        out.append(("compiled", kernels.simplex_solve))
    return out


@pytest.mark.parametrize("name,solver", backends())
def test_matches_scipy_on_random_lps(name, solver):
    rng = np.random.default_rng(101)
    agree = 0
    for trial in range(120):
        m = rng.integers(1, 9)
        n = m + rng.integers(1, 9)
        A, b, c = random_standard_form(rng, int(m), int(n))
        ref = scipy_opt.linprog(c, A_eq=A, b_eq=b, bounds=(0, None),
                                method="highs")
        status, x, obj, y = solver(A, b, c)
        if ref.status == 0:
            assert status == OPTIMAL, f"trial {trial}"
            assert obj == pytest.approx(ref.fun, abs=1e-7)
            assert np.min(x) >= -1e-9
            assert np.max(np.abs(A @ x - b)) < 1e-7
            agree += 1
        elif ref.status == 3:
            assert status == UNBOUNDED
        elif ref.status == 2:
            assert status == INFEASIBLE
    assert agree > 60  # the generator mostly produces solvable LPs


def test_backends_bitwise_identical():
    if kernels.BACKEND != "compiled":
        pytest.skip("compiled backend unavailable")
    rng = np.random.default_rng(77)
    for _ in range(200):
        m = rng.integers(1, 10)
        n = m + rng.integers(1, 10)
        A, b, c = random_standard_form(rng, int(m), int(n))
        s1, x1, o1, y1 = _simplex_py.simplex_solve(A, b, c)
        s2, x2, o2, y2 = kernels.simplex_solve(A, b, c)
        assert s1 == s2
        assert (x1 == x2).all()
        assert (y1 == y2).all()
        assert o1 == o2 or (np.isnan(o1) and np.isnan(o2))


def test_degenerate_cycling_guard():
    # classic cycling example; lexicographic rule must terminate
    A = np.array([
        [0.25, -8.0, -1.0, 9.0, 1.0, 0.0, 0.0],
        [0.5, -12.0, -0.5, 3.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    ])
    b = np.array([0.0, 0.0, 1.0])
    c = np.array([-0.75, 150.0, -0.02, 6.0, 0.0, 0.0, 0.0])
    for _, solver in backends():
        status, x, obj, _ = solver(A, b, c)
        assert status == OPTIMAL
        assert obj == pytest.approx(-0.77, abs=1e-9)


def test_infeasible_detected():
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    b = np.array([1.0, 3.0])
    c = np.array([1.0, 1.0])
    for _, solver in backends():
        status, _, _, _ = solver(A, b, c)
        assert status == INFEASIBLE


def test_unbounded_detected():
    # min -x1 with x1 - x2 = 0: ray (t, t) drives the objective down
    A = np.array([[1.0, -1.0]])
    b = np.array([0.0])
    c = np.array([-1.0, 0.0])
    for _, solver in backends():
        status, _, _, _ = solver(A, b, c)
        assert status == UNBOUNDED


class TestSolveLPWrapper:
    def test_free_variables_and_duals(self):
        # min x + y  s.t. x + y >= 1 (free variables go negative if useful)
        cost = np.array([1.0, 1.0])
        G = np.array([[-1.0, -1.0]])
        h = np.array([-1.0])
        sol = solve_lp(cost, G, h)
        assert sol.obj == pytest.approx(1.0, abs=1e-9)
        # stationarity: cost + G^T lambda = 0
        resid = cost + G.T @ sol.ineq_duals
        assert np.max(np.abs(resid)) < 1e-8
        assert sol.ineq_duals[0] >= -1e-9  # multipliers of <= rows are >= 0

    def test_equality_rows(self):
        cost = np.array([2.0, 3.0])
        E = np.array([[1.0, 1.0]])
        f = np.array([4.0])
        G = -np.eye(2)
        h = np.zeros(2)
        sol = solve_lp(cost, G, h, E, f)
        assert sol.obj == pytest.approx(8.0, abs=1e-8)
        assert sol.x == pytest.approx([4.0, 0.0], abs=1e-8)

    def test_infeasible_raises(self):
        cost = np.array([1.0])
        G = np.array([[1.0], [-1.0]])
        h = np.array([1.0, -2.0])  # x <= 1 and x >= 2
        with pytest.raises(LPInfeasibleError):
            solve_lp(cost, G, h)

    def test_unbounded_raises(self):
        cost = np.array([1.0])
        G = np.array([[1.0]])
        h = np.array([1.0])  # x <= 1, minimize x: unbounded below
        with pytest.raises(LPUnboundedError):
            solve_lp(cost, G, h)

    def test_matches_scipy_on_random_inequality_lps(self):
        rng = np.random.default_rng(33)
        solved = 0
        for _ in range(80):
            n = int(rng.integers(1, 6))
            k = int(rng.integers(1, 7))
            G = np.vstack([rng.normal(size=(k, n)), np.eye(n), -np.eye(n)])
            h = np.concatenate([rng.uniform(0.5, 2.0, size=k),
                                np.full(n, 5.0), np.full(n, 5.0)])
            cost = rng.normal(size=n)
            ref = scipy_opt.linprog(cost, A_ub=G, b_ub=h,
                                    bounds=(None, None), method="highs")
            assert ref.status == 0
            sol = solve_lp(cost, G, h)
            assert sol.obj == pytest.approx(ref.fun, abs=1e-7)
            solved += 1
        assert solved == 80


class TestCapturedRegressions:
    """LPs that once broke the kernel; shapes and scales are preserved."""

    def test_tree_lp(self):
        A = np.load(DATA / "lp_tree_A.npy")
        b = np.load(DATA / "lp_tree_b.npy")
        c = np.load(DATA / "lp_tree_c.npy")
        for name, solver in backends():
            status, x, obj, _ = solver(A, b, c)
            assert status == OPTIMAL, name
            assert obj == pytest.approx(-129.64295995056287, abs=1e-6)

    @pytest.mark.parametrize("tag,expected", [
        ("lp_stage_a", 69.98480112986276),
        ("lp_stage_b", 49.76493130542948),
        ("lp_stage_c", 1339.1101832953084),
        ("lp_stage_d", 623.6976760024368),
    ])
    def test_stage_lps(self, tag, expected):
        cost = np.load(DATA / f"{tag}_cost.npy")
        G = np.load(DATA / f"{tag}_G.npy")
        h = np.load(DATA / f"{tag}_h.npy")
        sol = solve_lp(cost, G, h)
        assert sol.obj == pytest.approx(expected, abs=1e-6)
        ref = scipy_opt.linprog(cost, A_ub=G, b_ub=h, bounds=(None, None),
                                method="highs")
        assert sol.obj == pytest.approx(ref.fun, abs=1e-6)

    def test_mixed_scale_rows(self):
        # rhs magnitudes spanning 1e-3 .. 1e6 in one problem
        rng = np.random.default_rng(5)
        n = 4
        G = np.vstack([np.eye(n), -np.eye(n), rng.normal(size=(3, n))])
        h = np.concatenate([[1e6, 1.0, 1e-3, 50.0],
                            [1e6, 1.0, 1e-3, 50.0],
                            rng.uniform(1.0, 2.0, size=3)])
        cost = rng.normal(size=n)
        sol = solve_lp(cost, G, h)
        ref = scipy_opt.linprog(cost, A_ub=G, b_ub=h, bounds=(None, None),
                                method="highs")
        assert sol.obj == pytest.approx(ref.fun, rel=1e-7)

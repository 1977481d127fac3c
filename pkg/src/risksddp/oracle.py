"""Reference solvers for small scenario trees.

These are deliberately independent of the cutting-plane engine: the
polyhedral risk kinds are solved as one extensive-form LP over the
whole tree, and the entropic kind by an outer cutting-plane method on
the joint control vector with exact nested evaluation.  Both are
exponential in the horizon and guarded by a node budget, which is the
point: they certify the engine's bounds on instances small enough to
enumerate.
"""

from __future__ import annotations

import numpy as np

from risksddp.lp import solve_lp
from risksddp.model import SocProblem
from risksddp.risk import DiscreteDistribution, RiskMeasure

TREE_NODE_BUDGET = 10 ** 5


def tree_node_count(problem: SocProblem) -> int:
    total, layer = 1, 1
    for t in range(1, problem.stages + 1):
        layer *= problem.n_realizations(t)
        total += layer
    return total


def _check_budget(problem: SocProblem, budget: int) -> None:
    count = tree_node_count(problem)
    if count > budget:
        raise ValueError(f"scenario tree has {count} nodes, budget is {budget}")


class _LPBuilder:
    """Accumulates sparse rows, assembles dense matrices at the end."""

    def __init__(self):
        self.ncols = 0
        self.obj: list[tuple[np.ndarray, np.ndarray]] = []
        self.ineq: list[tuple[np.ndarray, np.ndarray, float]] = []
        self.eq: list[tuple[np.ndarray, np.ndarray, float]] = []

    def cols(self, k: int) -> np.ndarray:
        out = np.arange(self.ncols, self.ncols + k)
        self.ncols += k
        return out

    def add_ineq(self, cols, vals, rhs: float) -> None:
        self.ineq.append((np.asarray(cols, dtype=int),
                          np.asarray(vals, dtype=float), float(rhs)))

    def add_eq(self, cols, vals, rhs: float) -> None:
        self.eq.append((np.asarray(cols, dtype=int),
                        np.asarray(vals, dtype=float), float(rhs)))

    def add_obj(self, cols, vals) -> None:
        self.obj.append((np.asarray(cols, dtype=int),
                         np.asarray(vals, dtype=float)))

    def build(self):
        cost = np.zeros(self.ncols)
        for cols, vals in self.obj:
            cost[cols] += vals
        G = np.zeros((len(self.ineq), self.ncols))
        h = np.zeros(len(self.ineq))
        for r, (cols, vals, rhs) in enumerate(self.ineq):
            G[r, cols] = vals
            h[r] = rhs
        E = np.zeros((len(self.eq), self.ncols))
        f = np.zeros(len(self.eq))
        for r, (cols, vals, rhs) in enumerate(self.eq):
            E[r, cols] = vals
            f[r] = rhs
        return cost, G, h, E, f


def _node_risk_rows(lp: _LPBuilder, risk: RiskMeasure, probs: np.ndarray,
                    y_cols: list[tuple[np.ndarray, np.ndarray]],
                    v_col: int) -> None:
    """Rows enforcing v >= risk objective of y_c = e_c + w_c per child.

    y_cols[c] holds the column pairs (e_c, w_c) whose sum is the child
    outcome value.
    """
    n = len(probs)
    if risk.kind == "expectation":
        cols = np.concatenate([np.concatenate([e, w]) for e, w in y_cols]
                              + [np.array([v_col])])
        vals = np.concatenate([np.array([p, p]) for p in probs]
                              + [np.array([-1.0])])
        lp.add_ineq(cols, vals, 0.0)
    elif risk.kind == "mean_avar":
        k = len(risk.levels)
        th = lp.cols(k)
        s = lp.cols(k * n).reshape(k, n)
        for i in range(k):
            for c, (e, w) in enumerate(y_cols):
                lp.add_ineq(np.concatenate([e, w, [th[i]], [s[i, c]]]),
                            [1.0, 1.0, -1.0, -1.0], 0.0)
                lp.add_ineq([s[i, c]], [-1.0], 0.0)
        cols = [np.array([v_col])]
        vals = [np.array([-1.0])]
        lam0 = risk.weights[0]
        for c, (e, w) in enumerate(y_cols):
            cols.append(np.concatenate([e, w]))
            vals.append(np.array([lam0 * probs[c], lam0 * probs[c]]))
        cols.append(th)
        vals.append(np.asarray(risk.weights[1:]))
        for i in range(k):
            cols.append(s[i])
            vals.append(risk.weights[1 + i] / risk.levels[i] * probs)
        lp.add_ineq(np.concatenate(cols), np.concatenate(vals), 0.0)
    elif risk.kind == "oce":
        slopes, kappas = risk.convex_pieces()
        th = lp.cols(1)
        tv = lp.cols(n)
        for c, (e, w) in enumerate(y_cols):
            for sb, kb in zip(slopes, kappas):
                lp.add_ineq(np.concatenate([e, w, th, [tv[c]]]),
                            [sb, sb, -sb, -1.0], -kb)
        lp.add_ineq(np.concatenate([th, tv, [v_col]]),
                    np.concatenate([[1.0], probs, [-1.0]]), 0.0)
    else:
        raise ValueError(f"risk kind {risk.kind!r} has no LP formulation")


def _extensive_value(problem: SocProblem, risk: RiskMeasure) -> float:
    lp = _LPBuilder()
    T = problem.stages

    def visit(t: int, x: np.ndarray) -> int:
        """Adds the subtree rooted at stage t; returns its value column."""
        if t == T + 1:
            v = lp.cols(1)[0]
            for p in range(problem.terminal_cx.shape[0]):
                lp.add_ineq(np.concatenate([x, [v]]),
                            np.concatenate([problem.terminal_cx[p], [-1.0]]),
                            -problem.terminal_c0[p])
            return v
        cs = problem.control_set(t)
        m = cs.dim
        u = lp.cols(m)
        for i in range(m):
            lp.add_ineq([u[i]], [1.0], cs.ub[i])
            lp.add_ineq([u[i]], [-1.0], -cs.lb[i])
        for r in range(cs.n_rows):
            lp.add_ineq(np.concatenate([u, x]),
                        np.concatenate([cs.G_u[r], cs.G_x[r]]), cs.h[r])
        reals = problem.realizations[t - 1]
        y_cols = []
        for real in reals:
            e = lp.cols(1)
            for q in range(real.cost_cx.shape[0]):
                lp.add_ineq(np.concatenate([x, u, e]),
                            np.concatenate([real.cost_cx[q], real.cost_cu[q],
                                            [-1.0]]),
                            -real.cost_c0[q])
            xc = lp.cols(problem.state_dims[t])
            for i in range(problem.state_dims[t]):
                lp.add_eq(np.concatenate([xc[i:i + 1], x, u]),
                          np.concatenate([[1.0], -real.A[i], -real.B[i]]),
                          real.b[i])
            wc = visit(t + 1, xc)
            y_cols.append((e, np.array([wc])))
        v = lp.cols(1)[0]
        _node_risk_rows(lp, risk, problem.stage_probs(t), y_cols, v)
        return v

    x_root = lp.cols(problem.state_dims[0])
    for i in range(problem.state_dims[0]):
        lp.add_eq([x_root[i]], [1.0], problem.initial_state[i])
    v_root = visit(1, x_root)
    lp.add_obj([v_root], [1.0])
    cost, G, h, E, f = lp.build()
    sol = solve_lp(cost, G, h, E, f, context="tree LP")
    return sol.obj


# entropic tree optimum -------------------------------------------------------


class _TreeNode:
    __slots__ = ("t", "uslice", "C", "d", "children")

    def __init__(self, t, uslice, C, d):
        self.t = t
        self.uslice = uslice
        self.C = C
        self.d = d
        self.children: list[tuple] = []  # (realization, prob, _TreeNode)


def _build_tree(problem: SocProblem):
    """Joint-control layout: states become affine maps of the control stack."""
    T = problem.stages
    M, layer = 0, 1
    for t in range(1, T + 1):
        M += layer * problem.control_dims[t - 1]
        layer *= problem.n_realizations(t)
    counter = [0]

    def make(t: int, C: np.ndarray, d: np.ndarray) -> _TreeNode:
        if t == T + 1:
            return _TreeNode(t, None, C, d)
        m = problem.control_dims[t - 1]
        s0 = counter[0]
        counter[0] += m
        node = _TreeNode(t, (s0, m), C, d)
        for real in problem.realizations[t - 1]:
            Cc = real.A @ C
            Cc[:, s0:s0 + m] += real.B
            dc = real.A @ d + real.b
            node.children.append((real, real.prob, make(t + 1, Cc, dc)))
        return node

    nx0 = problem.state_dims[0]
    root = make(1, np.zeros((nx0, M)), problem.initial_state.copy())
    return root, M


def _tree_value_grad(problem: SocProblem, risk: RiskMeasure, root: _TreeNode,
                     U: np.ndarray, M: int):
    """Nested risk value of the tree under joint controls U, with gradient.

    Bottom-up pass computes each node's value, state sensitivity, and
    direct control sensitivity; top-down pass turns the probability and
    risk weights into multipliers on the control blocks.
    """
    g = np.zeros(M)
    node_locals: dict = {}

    def backward(node: _TreeNode, x: np.ndarray):
        if node.t == problem.stages + 1:
            node_locals[id(node)] = None
            return problem.terminal_value(x), problem.terminal_subgrad(x)
        s0, m = node.uslice
        u = U[s0:s0 + m]
        ys, parts = [], []
        for real, _, child in node.children:
            vc, dvc = backward(child, real.next_state(x, u))
            pieces = real.cost_pieces_at(x, u)
            q = int(np.argmax(pieces))
            ys.append(float(pieces[q]) + vc)
            parts.append((real, q, dvc, child))
        y = np.array(ys)
        probs = np.array([p for _, p, _ in node.children])
        theta = risk.minimize_theta(DiscreteDistribution(y, probs))
        rho = risk.grads_at(y, theta)
        v = float(probs @ risk.values_at(y, theta))
        dvdx = np.zeros(len(x))
        du = np.zeros(m)
        for c, (real, q, dvc, _) in enumerate(parts):
            w = probs[c] * rho[c]
            dvdx += w * (real.cost_cx[q] + real.A.T @ dvc)
            du += w * (real.cost_cu[q] + real.B.T @ dvc)
        node_locals[id(node)] = (du, probs * rho, [p[3] for p in parts])
        return v, dvdx

    def push(node: _TreeNode, mult: float) -> None:
        locals_ = node_locals[id(node)]
        if locals_ is None:
            return
        du, weights, children = locals_
        s0, m = node.uslice
        g[s0:s0 + m] += mult * du
        for c, child in enumerate(children):
            push(child, mult * weights[c])

    value, _ = backward(root, problem.initial_state.copy())
    push(root, 1.0)
    return value, g


def _tree_feasibility_rows(problem: SocProblem, root: _TreeNode, M: int):
    rows_a, rows_b = [], []

    def visit(node: _TreeNode) -> None:
        if node.t == problem.stages + 1:
            return
        cs = problem.control_set(node.t)
        s0, m = node.uslice
        for i in range(m):
            row = np.zeros(M + 1)
            row[s0 + i] = 1.0
            rows_a.append(row)
            rows_b.append(cs.ub[i])
            row = np.zeros(M + 1)
            row[s0 + i] = -1.0
            rows_a.append(row)
            rows_b.append(-cs.lb[i])
        for r in range(cs.n_rows):
            row = np.zeros(M + 1)
            row[s0:s0 + m] += cs.G_u[r]
            row[:M] += cs.G_x[r] @ node.C
            rows_a.append(row)
            rows_b.append(cs.h[r] - float(cs.G_x[r] @ node.d))
        for _, _, child in node.children:
            visit(child)

    visit(root)
    return np.array(rows_a), np.array(rows_b)


def _kelley_tree_optimum(problem: SocProblem, risk: RiskMeasure,
                         tol: float = 1e-6, max_iters: int = 2000):
    root, M = _build_tree(problem)
    G0, h0 = _tree_feasibility_rows(problem, root, M)
    L1 = problem.value_lower_bounds()[0]
    tau_row = np.zeros(M + 1)
    tau_row[M] = -1.0
    rows = [G0, tau_row[None, :]]
    rhs = [h0, np.array([-L1])]
    cost = np.zeros(M + 1)
    cost[M] = 1.0

    best_val = np.inf
    lb = -np.inf
    sol = solve_lp(cost, np.vstack(rows), np.concatenate(rhs),
                   context="tree Kelley seed")
    U = sol.x[:M]
    for _ in range(max_iters):
        val, grad = _tree_value_grad(problem, risk, root, U, M)
        best_val = min(best_val, val)
        cut = np.concatenate([grad, [-1.0]])
        rows.append(cut[None, :])
        rhs.append(np.array([float(grad @ U) - val]))
        sol = solve_lp(cost, np.vstack(rows), np.concatenate(rhs),
                       context="tree Kelley")
        lb = sol.obj
        if best_val - lb <= tol * (1.0 + abs(best_val)):
            break
        U = sol.x[:M]
    # inner parameter minimization is iterative, so pad the certificate
    guard = 1e-7 * (1.0 + abs(best_val))
    return min(lb, best_val) - guard, best_val


def exact_optimal_enclosure(problem: SocProblem, risk: RiskMeasure,
                            budget: int = TREE_NODE_BUDGET):
    """Certified (lower, upper) bracket on the true optimal value."""
    _check_budget(problem, budget)
    if risk.is_polyhedral:
        val = _extensive_value(problem, risk)
        pad = 1e-9 * (1.0 + abs(val))
        return val - pad, val + pad
    return _kelley_tree_optimum(problem, risk)


def exact_optimal_value(problem: SocProblem, risk: RiskMeasure,
                        budget: int = TREE_NODE_BUDGET) -> float:
    """Optimal nested risk value; attainable, so safe as an upper reference."""
    _check_budget(problem, budget)
    if risk.is_polyhedral:
        return _extensive_value(problem, risk)
    return _kelley_tree_optimum(problem, risk)[1]


def exact_policy_value(problem: SocProblem, risk: RiskMeasure, policy,
                       budget: int = TREE_NODE_BUDGET) -> float:
    """Nested risk value of the given policy over the whole tree.

    policy is a pools list or a callable (t, x) -> (u, theta); the
    parameter minimization at each node is redone exactly, so the result
    does not depend on the stored theta choices.
    """
    from risksddp.evaluation import _as_policy

    _check_budget(problem, budget)
    step = _as_policy(problem, risk, policy)
    memo: dict = {}

    def walk(t: int, x: np.ndarray) -> float:
        if t == problem.stages + 1:
            return problem.terminal_value(x)
        key = (t, x.tobytes())
        hit = memo.get(key)
        if hit is not None:
            return hit
        u, _ = step(t, x)
        reals = problem.realizations[t - 1]
        y = np.array([r.cost_value(x, u) + walk(t + 1, r.next_state(x, u))
                      for r in reals])
        val = risk.evaluate(DiscreteDistribution(y, problem.stage_probs(t)))
        memo[key] = val
        return val

    return walk(1, problem.initial_state.copy())


# grid dynamic programming cross-check ---------------------------------------


def _avar_rows(Y: np.ndarray, probs: np.ndarray, alpha: float) -> np.ndarray:
    """Average value-at-risk of each row of Y under probs."""
    order = np.argsort(-Y, axis=1)
    ysort = np.take_along_axis(Y, order, axis=1)
    psort = probs[order]
    cum = np.cumsum(psort, axis=1)
    taken = np.minimum(cum, alpha)
    w = np.diff(np.concatenate([np.zeros((Y.shape[0], 1)), taken], axis=1),
                axis=1)
    return (w * ysort).sum(axis=1) / alpha


def _risk_rows(risk: RiskMeasure, Y: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Vectorized risk.evaluate over the rows of Y (polyhedral kinds)."""
    if risk.kind == "expectation":
        return Y @ probs
    if risk.kind == "mean_avar":
        out = risk.weights[0] * (Y @ probs)
        for lam, alpha in zip(risk.weights[1:], risk.levels):
            out = out + lam * _avar_rows(Y, probs, alpha)
        return out
    if risk.kind == "oce":
        # same candidate set as minimize_theta: z_j plus each utility kink
        cands = (Y[:, :, None]
                 + risk.breakpoints[None, None, :]).reshape(Y.shape[0], -1)
        w = cands[:, :, None] - Y[:, None, :]
        obj = cands - risk.utility(w) @ probs
        return obj.min(axis=1)
    raise ValueError(f"risk kind {risk.kind!r} is not polyhedral")


def grid_dp_value(problem: SocProblem, risk: RiskMeasure, n_grid: int = 2000,
                  n_ugrid: int = 801) -> float:
    """Brute-force DP on state and control grids; one-dimensional states only.

    Biased slightly upward (interpolation of a convex function plus
    control discretization), so treat it as a sanity band, not a bound.
    """
    if any(n != 1 for n in problem.state_dims):
        raise ValueError("grid DP supports one-dimensional states only")
    T = problem.stages
    boxes = problem.reach_boxes()
    grids = [np.linspace(lo[0], hi[0], n_grid) for lo, hi in boxes]

    xs = grids[T]
    V = np.max(problem.terminal_cx @ xs[None, :] + problem.terminal_c0[:, None],
               axis=0)
    for t in range(T, 0, -1):
        cs = problem.control_set(t)
        m = cs.dim
        axes = [np.linspace(cs.lb[i], cs.ub[i],
                            n_ugrid if m == 1 else max(41, n_ugrid // 16))
                for i in range(m)]
        mesh = np.meshgrid(*axes, indexing="ij")
        ucands = np.stack([a.ravel() for a in mesh], axis=1)
        reals = problem.realizations[t - 1]
        probs = problem.stage_probs(t)
        xs_t = grids[t - 1]
        xs_next = grids[t]
        Vt = np.empty(n_grid)
        base_gu = ucands @ cs.G_u.T if cs.n_rows else None
        for i, xv in enumerate(xs_t):
            x = np.array([xv])
            if cs.n_rows:
                mask = np.all(base_gu + (cs.G_x @ x)[None, :] <= cs.h + 1e-12,
                              axis=1)
                if not mask.any():
                    Vt[i] = np.inf
                    continue
                uu = ucands[mask]
            else:
                uu = ucands
            Y = np.empty((uu.shape[0], len(reals)))
            for j, r in enumerate(reals):
                xn = float(r.A[0, 0]) * xv + uu @ r.B[0] + float(r.b[0])
                cost = np.max(r.cost_cx[:, 0][None, :] * xv
                              + uu @ r.cost_cu.T + r.cost_c0[None, :], axis=1)
                Y[:, j] = cost + np.interp(xn, xs_next, V)
            Vt[i] = _risk_rows(risk, Y, probs).min()
        V = Vt
    return float(np.interp(problem.initial_state[0], grids[0], V))

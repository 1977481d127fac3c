"""Single-stage subproblems of the risk-adjusted control recursion.

A stage problem at state x minimizes, over feasible controls u and the
risk parameter theta, the expected generating-function value of the
per-realization outcome

    y_j(u) = stage_cost_j(x, u) + future(A_j x + B_j u + b_j)

where `future` is a polyhedral under-approximation of the next-stage
cost-to-go (a cut pool).  For polyhedral risk kinds the stage problem
is a linear program; cut rows for the future term are generated on
demand so the LP stays small even with thousands of cuts.  For the
KL-divergence kind the stage problem is solved by coordinate descent
(exact scalar theta step, Kelley cutting-plane u step).

Every solve also produces a valid affine minorant of the stage value
function, extracted from LP duals (polyhedral kinds) or assembled from
the chain-rule subgradient with rigor corrections (KL).  Cut validity
holds on the reachable state region; the pool passed in must contain
at least one cut that lower-bounds the next-stage cost everywhere
reachable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from risksddp.cuts import CutPool
from risksddp.lp import LPNumericalError, solve_lp
from risksddp.risk import DiscreteDistribution, RiskMeasure

_MAX_ROWGEN_ROUNDS = 300
_KELLEY_MAX = 60
_OUTER_MAX = 60
_RHO_MAX = 1e6


@dataclass
class StageSolution:
    """Result of one stage solve, including the cut it induces."""

    value: float
    u: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    cut_intercept: float
    cut_gradient: np.ndarray
    certified: bool
    rounds: int = 0

    def cut_value(self, x: np.ndarray) -> float:
        return self.cut_intercept + float(self.cut_gradient @ x)


class _RealCache:
    """Incremental products of pool gradients with one realization."""

    __slots__ = ("n", "PB", "PA", "pb")

    def __init__(self, m: int, nx: int):
        self.n = 0
        self.PB = np.zeros((64, m))
        self.PA = np.zeros((64, nx))
        self.pb = np.zeros(64)

    def sync(self, pool: CutPool, count: int, A, B, b) -> None:
        cap = self.PB.shape[0]
        if count > cap:
            while cap < count:
                cap *= 2
            for name in ("PB", "PA", "pb"):
                old = getattr(self, name)
                fresh = np.zeros((cap,) + old.shape[1:])
                fresh[: self.n] = old[: self.n]
                setattr(self, name, fresh)
        if count > self.n:
            new = pool.a_view(count)[self.n : count]
            self.PB[self.n : count] = new @ B
            self.PA[self.n : count] = new @ A
            self.pb[self.n : count] = new @ b
            self.n = count


class StageWorkspace:
    """Reusable per-problem scratch: cut products and warm-start hints.

    Warm-start hints change which LP rows get generated first (and the
    KL descent's starting iterate), so for replayable runs the hints
    are part of the checkpoint.  Passing warm=False to solve_stage
    ignores the hints and yields a canonical, history-free solve.
    """

    def __init__(self):
        self._real: dict = {}
        self.active: dict[int, list[list[int]]] = {}
        self.last_u: dict[int, np.ndarray] = {}
        self.last_theta: dict[int, np.ndarray] = {}

    def real_cache(self, t: int, j: int, m: int, nx: int) -> _RealCache:
        key = (t, j)
        cache = self._real.get(key)
        if cache is None:
            cache = self._real[key] = _RealCache(m, nx)
        return cache

    def hints_config(self) -> dict:
        return {
            "active": {str(t): [list(a) for a in acts] for t, acts in self.active.items()},
            "last_u": {str(t): u.tolist() for t, u in self.last_u.items()},
            "last_theta": {str(t): th.tolist() for t, th in self.last_theta.items()},
        }

    def load_hints(self, cfg: dict) -> None:
        self.active = {int(t): [list(a) for a in acts]
                       for t, acts in cfg.get("active", {}).items()}
        self.last_u = {int(t): np.asarray(u, dtype=np.float64)
                       for t, u in cfg.get("last_u", {}).items()}
        self.last_theta = {int(t): np.asarray(th, dtype=np.float64)
                           for t, th in cfg.get("last_theta", {}).items()}


def _interval_min(C: np.ndarray, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Row-wise min of C @ u over the box [lb, ub]."""
    return np.minimum(C * lb, C * ub).sum(axis=-1)


def _prepare(problem, t, x, pool, upto, workspace):
    reals = problem.realizations[t - 1]
    cs = problem.control_set(t)
    m, nx = cs.dim, problem.state_dims[t - 1]
    count = pool.h_view(upto).shape[0]
    caches = []
    for j, r in enumerate(reals):
        cache = (workspace.real_cache(t, j, m, nx) if workspace is not None
                 else _RealCache(m, nx))
        cache.sync(pool, count, r.A, r.B, r.b)
        caches.append(cache)
    return reals, cs, m, nx, count, caches


def _outcomes(problem, t, x, u, pool, count, reals):
    """Tight per-realization outcomes plus active pieces and cuts."""
    N = len(reals)
    y = np.empty(N)
    qhat = np.empty(N, dtype=np.int64)
    ihat = np.empty(N, dtype=np.int64)
    for j, r in enumerate(reals):
        pieces = r.cost_pieces_at(x, u)
        qhat[j] = int(np.argmax(pieces))
        val, i = pool.argmax(r.next_state(x, u), upto=count)
        ihat[j] = i
        y[j] = float(pieces[qhat[j]]) + val
    return y, qhat, ihat


def solve_stage(problem, t: int, x, risk: RiskMeasure, pool: CutPool,
                upto: int | None = None, workspace: StageWorkspace | None = None,
                warm: bool = True) -> StageSolution:
    """Solve the stage-t problem at state x against the given pool."""
    x = np.asarray(x, dtype=np.float64)
    if risk.is_polyhedral:
        return _solve_polyhedral(problem, t, x, risk, pool, upto, workspace, warm)
    return _solve_kl(problem, t, x, risk, pool, upto, workspace, warm)


# polyhedral kinds -----------------------------------------------------------


def _solve_polyhedral(problem, t, x, risk, pool, upto, ws, warm):
    reals, cs, m, nx, count, caches = _prepare(problem, t, x, pool, upto, ws)
    N = len(reals)
    probs = problem.stage_probs(t)
    h_pool = pool.h_view(upto)
    Q = [r.cost_cx.shape[0] for r in reals]
    cost_rhs = [-(r.cost_cx @ x + r.cost_c0) for r in reals]
    fut_const = [caches[j].PA[:count] @ x + caches[j].pb[:count] + h_pool
                 for j in range(N)]

    active = None
    if warm and ws is not None:
        prev = ws.active.get(t)
        if prev is not None and len(prev) == N:
            active = [[i for i in a if i < count] for a in prev]
    if active is None:
        active = [[] for _ in range(N)]
    u_ref = None
    if warm and ws is not None:
        u_ref = ws.last_u.get(t)
    if u_ref is None or u_ref.shape != (m,):
        u_ref = np.clip(0.5 * (cs.lb + cs.ub), cs.lb, cs.ub)
    for j in range(N):
        if not active[j]:
            active[j] = [int(np.argmax(fut_const[j] + caches[j].PB[:count] @ u_ref))]

    off_e, off_w = m, m + N
    kind = risk.kind
    if kind == "mean_avar":
        k = len(risk.levels)
        lam0, lam, alph = risk.weights[0], risk.weights[1:], risk.levels
        n_var = m + 2 * N + k + k * N
    elif kind == "oce":
        sig, kap = risk.convex_pieces()
        P = sig.shape[0]
        n_var = m + 2 * N + 1 + N
    else:
        k = 0
        n_var = m + 2 * N
    off_x = m + 2 * N

    cost = np.zeros(n_var)
    if kind == "expectation":
        cost[off_e : off_e + N] = probs
        cost[off_w : off_w + N] = probs
    elif kind == "mean_avar":
        cost[off_e : off_e + N] = lam0 * probs
        cost[off_w : off_w + N] = lam0 * probs
        for i in range(k):
            cost[off_x + i] = lam[i]
            cost[off_x + k + i * N : off_x + k + (i + 1) * N] = lam[i] * probs / alph[i]
    else:
        cost[off_x] = 1.0
        cost[off_x + 1 : off_x + 1 + N] = probs

    r_rows = cs.n_rows
    ctrl_rhs = cs.h - (cs.G_x @ x if r_rows and cs.G_x.size else 0.0)

    sol = None
    rounds = 0
    while rounds < _MAX_ROWGEN_ROUNDS:
        rounds += 1
        n_fut = sum(len(a) for a in active)
        n_base = 2 * m + r_rows + sum(Q) + n_fut
        if kind == "mean_avar":
            n_rows = n_base + 2 * k * N
        elif kind == "oce":
            n_rows = n_base + N * P
        else:
            n_rows = n_base
        G = np.zeros((n_rows, n_var))
        h = np.zeros(n_rows)
        G[0:m, 0:m] = np.eye(m)
        h[0:m] = cs.ub
        G[m : 2 * m, 0:m] = -np.eye(m)
        h[m : 2 * m] = -cs.lb
        row = 2 * m
        if r_rows:
            G[row : row + r_rows, 0:m] = cs.G_u
            h[row : row + r_rows] = ctrl_rhs
            row += r_rows
        cost_off = row
        for j, r in enumerate(reals):
            G[row : row + Q[j], 0:m] = r.cost_cu
            G[row : row + Q[j], off_e + j] = -1.0
            h[row : row + Q[j]] = cost_rhs[j]
            row += Q[j]
        fut_off = row
        for j in range(N):
            a = active[j]
            G[row : row + len(a), 0:m] = caches[j].PB[a]
            G[row : row + len(a), off_w + j] = -1.0
            h[row : row + len(a)] = -fut_const[j][a]
            row += len(a)
        if kind == "mean_avar":
            for i in range(k):
                for j in range(N):
                    G[row, off_e + j] = 1.0
                    G[row, off_w + j] = 1.0
                    G[row, off_x + i] = -1.0
                    G[row, off_x + k + i * N + j] = -1.0
                    row += 1
            for i in range(k * N):
                G[row, off_x + k + i] = -1.0
                row += 1
        elif kind == "oce":
            for j in range(N):
                for b in range(P):
                    G[row, off_e + j] = sig[b]
                    G[row, off_w + j] = sig[b]
                    G[row, off_x] = -sig[b]
                    G[row, off_x + 1 + j] = -1.0
                    h[row] = -kap[b]
                    row += 1

        sol = solve_lp(cost, G=G, h=h, context=f"stage {t} ({kind})")
        u = sol.x[:m]
        violated = False
        for j, r in enumerate(reals):
            val, i = pool.argmax(r.next_state(x, u), upto=count)
            if val > sol.x[off_w + j] + 1e-7 * (1.0 + abs(val)):
                if i in active[j]:
                    raise LPNumericalError(
                        f"stage {t}: cut row {i} ineffective for realization {j}")
                active[j].append(i)
                violated = True
        if not violated:
            break
    else:
        raise LPNumericalError(f"stage {t}: row generation did not settle")

    duals = sol.ineq_duals
    g = np.zeros(nx)
    if r_rows and cs.G_x.size:
        g += cs.G_x.T @ duals[2 * m : 2 * m + r_rows]
    off = cost_off
    for j, r in enumerate(reals):
        g += duals[off : off + Q[j]] @ r.cost_cx
        off += Q[j]
    for j in range(N):
        a = active[j]
        g += duals[off : off + len(a)] @ caches[j].PA[a]
        off += len(a)

    y, _, _ = _outcomes(problem, t, x, u, pool, count, reals)
    dist = DiscreteDistribution(y, probs)
    theta = risk.minimize_theta(dist)
    check = float(probs @ risk.values_at(y, theta))
    if abs(check - sol.obj) > 1e-4 * (1.0 + abs(sol.obj)):
        raise LPNumericalError(
            f"stage {t}: objective {sol.obj!r} disagrees with risk value {check!r}")

    if ws is not None:
        for j in range(N):
            if len(active[j]) > 20:
                active[j] = active[j][-12:]
        ws.active[t] = active
        ws.last_u[t] = u.copy()

    return StageSolution(
        value=sol.obj, u=u, theta=theta, y=y,
        cut_intercept=sol.obj - float(g @ x), cut_gradient=g,
        certified=True, rounds=rounds)


# KL-divergence kind ---------------------------------------------------------


def _stage_outcome_bounds(problem, t):
    """Interval [ylo, yhi] bounding stage-t outcomes over the reach box."""
    iv = problem.stage_cost_intervals()
    vlb = problem.value_lower_bounds()
    vub = problem.value_upper_bounds()
    return iv[t - 1][0] + vlb[t], iv[t - 1][1] + vub[t]


def _solve_kl(problem, t, x, risk, pool, upto, ws, warm):
    reals, cs, m, nx, count, caches = _prepare(problem, t, x, pool, upto, ws)
    N = len(reals)
    probs = problem.stage_probs(t)
    h_pool = pool.h_view(upto)
    fut_const = [caches[j].PA[:count] @ x + caches[j].pb[:count] + h_pool
                 for j in range(N)]
    r_rows = cs.n_rows
    ctrl_rhs = cs.h - (cs.G_x @ x if r_rows and cs.G_x.size else 0.0)

    # stage objective is bounded below by the best outcome bound
    tau_lb = 0.0
    for j, r in enumerate(reals):
        lo_cost = float(np.max(r.cost_cx @ x + r.cost_c0
                               + _interval_min(r.cost_cu, cs.lb, cs.ub)))
        lo_fut = float(np.max(fut_const[j]
                              + _interval_min(caches[j].PB[:count], cs.lb, cs.ub)))
        tau_lb += probs[j] * (lo_cost + lo_fut)

    def outcomes(u):
        return _outcomes(problem, t, x, u, pool, count, reals)

    # starting iterate: warm hint or the risk-neutral LP solution; the
    # hint came from another state, so it must be feasible here too
    u0 = ws.last_u.get(t) if (warm and ws is not None) else None
    if u0 is not None and u0.shape == (m,):
        ok = bool(np.all(u0 >= cs.lb - 1e-9) and np.all(u0 <= cs.ub + 1e-9))
        if ok and r_rows:
            slack_tol = 1e-9 * (1.0 + float(np.max(np.abs(ctrl_rhs))))
            ok = bool(np.max(cs.G_u @ u0 - ctrl_rhs) <= slack_tol)
        if not ok:
            u0 = None
    if u0 is None or u0.shape != (m,):
        from risksddp.risk import Expectation

        boot = _solve_polyhedral(problem, t, x, Expectation(), pool, upto, ws, warm)
        u0 = boot.u
    u_best = u0
    y, qh, ih = outcomes(u_best)
    theta = risk.minimize_theta(DiscreteDistribution(y, probs))
    f_best = float(probs @ risk.values_at(y, theta))
    total_rounds = 0

    base_rows = 2 * m + r_rows + 1
    for _outer in range(_OUTER_MAX):
        f_enter = f_best
        # Kelley on u for fixed theta
        model: list[tuple[np.ndarray, float]] = []
        u_cand, y_c, qh_c, ih_c, f_c = u_best, y, qh, ih, f_best
        for _inner in range(_KELLEY_MAX):
            rho = risk.grads_at(y_c, theta)
            if not np.all(rho < _RHO_MAX):
                # candidate far outside theta's comfort zone (nan or an
                # absurdly steep slope would poison the model LP); keep
                # the incumbent and let the outer loop re-center theta
                break
            gu = np.zeros(m)
            for j, r in enumerate(reals):
                gu += probs[j] * rho[j] * (r.cost_cu[qh_c[j]] + caches[j].PB[ih_c[j]])
            model.append((gu, float(gu @ u_cand) - f_c))
            n_rows = base_rows + len(model)
            G = np.zeros((n_rows, m + 1))
            h = np.zeros(n_rows)
            G[0:m, 0:m] = np.eye(m)
            h[0:m] = cs.ub
            G[m : 2 * m, 0:m] = -np.eye(m)
            h[m : 2 * m] = -cs.lb
            row = 2 * m
            if r_rows:
                G[row : row + r_rows, 0:m] = cs.G_u
                h[row : row + r_rows] = ctrl_rhs
                row += r_rows
            G[row, m] = -1.0
            h[row] = -tau_lb
            row += 1
            for gi, rhs in model:
                G[row, 0:m] = gi
                G[row, m] = -1.0
                h[row] = rhs
                row += 1
            cost = np.zeros(m + 1)
            cost[m] = 1.0
            lp = solve_lp(cost, G=G, h=h, context=f"stage {t} (kl model)")
            total_rounds += 1
            u_cand = lp.x[:m]
            y_c, qh_c, ih_c = outcomes(u_cand)
            f_c = float(probs @ risk.values_at(y_c, theta))
            if f_c < f_best:
                u_best, y, qh, ih, f_best = u_cand, y_c, qh_c, ih_c, f_c
            if f_best - lp.obj <= 1e-9 * (1.0 + abs(f_best)):
                break
        theta = risk.minimize_theta(DiscreteDistribution(y, probs))
        f_best = float(probs @ risk.values_at(y, theta))
        if f_enter - f_best <= 1e-10 * (1.0 + abs(f_best)):
            break

    # chain-rule subgradient at (x, u_best, theta)
    rho = risk.grads_at(y, theta)
    gx = np.zeros(nx)
    gu = np.zeros(m)
    gth = np.zeros(2)
    for j, r in enumerate(reals):
        w = probs[j] * rho[j]
        gx += w * (r.cost_cx[qh[j]] + caches[j].PA[ih[j]])
        gu += w * (r.cost_cu[qh[j]] + caches[j].PB[ih[j]])
        gth += probs[j] * risk.theta_grad(float(y[j]), theta)

    # lower-bound the control term of the linearization over U(x)
    if r_rows:
        G = np.vstack([np.eye(m), -np.eye(m), cs.G_u])
        h = np.concatenate([cs.ub, -cs.lb, ctrl_rhs])
        aux = solve_lp(gu, G=G, h=h, context=f"stage {t} (kl control dual)")
        mu_aux = aux.obj
        g_ctrl = cs.G_x.T @ aux.ineq_duals[2 * m :] if cs.G_x.size else np.zeros(nx)
    else:
        mu_aux = float(_interval_min(gu, cs.lb, cs.ub))
        g_ctrl = np.zeros(nx)

    # rigor slack: the theta component of the linearization over the
    # box known to contain every attained minimizer on the reach set
    ylo, yhi = _stage_outcome_bounds(problem, t)
    lam_hi = 10.0 * risk._lam_bracket(max(yhi - ylo, 0.0))[1]
    mu_hat, lam_hat = float(theta[0]), float(theta[1])
    th_term = min(gth[0] * (ylo - mu_hat), gth[0] * (yhi - mu_hat)) \
        + min(gth[1] * (0.0 - lam_hat), gth[1] * (lam_hi - lam_hat))
    th_term = min(th_term, 0.0)

    cut_at_x = f_best + th_term + (mu_aux - float(gu @ u_best))
    g = gx + g_ctrl

    if ws is not None:
        ws.last_u[t] = u_best.copy()
        ws.last_theta[t] = theta.copy()

    return StageSolution(
        value=f_best, u=u_best, theta=theta, y=y,
        cut_intercept=cut_at_x - float(g @ x), cut_gradient=g,
        certified=False, rounds=total_rounds)

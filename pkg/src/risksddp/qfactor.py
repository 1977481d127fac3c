"""Cut training on the stage objective as a function of (x, u, theta).

Instead of approximating the state value function, this variant builds
polyhedral lower models of the pre-decision objective
Q_t(x, u, theta) = sum_j p_j psi(c_j(x, u) + min Q_{t+1}, theta).
Stage decisions become pure LPs over the cut pool for every risk kind,
including the entropic one; the nonlinearity only enters when a new cut
is extracted in the backward pass.

The risk parameter ranges over a bounding box derived from interval
bounds on the stage outcome c + V; the box is wide enough to contain
every parameter value the exact minimization could pick on reachable
states, so restricting theta to it loses nothing.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from risksddp.cuts import CutPool
from risksddp.engine import BoundsRecord, TrainOptions
from risksddp.lp import solve_lp
from risksddp.model import SocProblem
from risksddp.risk import DiscreteDistribution, RiskMeasure, risk_measure_from_config
from risksddp.stage import _stage_outcome_bounds

log = logging.getLogger("risksddp.qfactor")


def theta_box(problem: SocProblem, risk: RiskMeasure,
              t: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-stage parameter bounds covering all attainable minimizers."""
    k = risk.theta_dim
    if k == 0:
        return np.zeros(0), np.zeros(0)
    ylo, yhi = _stage_outcome_bounds(problem, t)
    spread = yhi - ylo
    if risk.kind == "mean_avar":
        return np.full(k, ylo - spread), np.full(k, yhi + spread)
    if risk.kind == "oce":
        bp = risk.breakpoints
        return (np.array([ylo - spread + min(0.0, float(bp.min()))]),
                np.array([yhi + spread + max(0.0, float(bp.max()))]))
    if risk.kind == "kl":
        lam_lo, lam_hi = risk._lam_bracket(max(spread, 0.0))
        return (np.array([ylo - spread, lam_lo]),
                np.array([yhi + spread, lam_hi]))
    raise ValueError(f"no parameter box for risk kind {risk.kind!r}")


@dataclass
class QStageSolution:
    value: float
    u: np.ndarray
    theta: np.ndarray
    dstate: np.ndarray  # subgradient of the LP value in the state argument


def solve_q_stage(problem: SocProblem, t: int, x: np.ndarray,
                  pool: CutPool, box: tuple[np.ndarray, np.ndarray],
                  upto: int | None = None) -> QStageSolution:
    """min over feasible (u, theta) of the pooled model at state x."""
    cs = problem.control_set(t)
    m, r = cs.dim, cs.n_rows
    nx = problem.state_dims[t - 1]
    k = box[0].size
    count = len(pool) if upto is None else upto
    a = pool.a_view(count)
    hvals = pool.h_view(count)
    ax, au, ath = a[:, :nx], a[:, nx:nx + m], a[:, nx + m:]

    nvar = m + k + 1
    nrows = 2 * m + r + 2 * k + count
    G = np.zeros((nrows, nvar))
    h = np.empty(nrows)
    G[:m, :m] = np.eye(m)
    h[:m] = cs.ub
    G[m:2 * m, :m] = -np.eye(m)
    h[m:2 * m] = -cs.lb
    row = 2 * m
    if r:
        G[row:row + r, :m] = cs.G_u
        h[row:row + r] = cs.h - cs.G_x @ x
    row += r
    if k:
        G[row:row + k, m:m + k] = np.eye(k)
        h[row:row + k] = box[1]
        G[row + k:row + 2 * k, m:m + k] = -np.eye(k)
        h[row + k:row + 2 * k] = -box[0]
    row += 2 * k
    G[row:, :m] = au
    G[row:, m:m + k] = ath
    G[row:, m + k] = -1.0
    h[row:] = -hvals - ax @ x

    cost = np.zeros(nvar)
    cost[m + k] = 1.0
    sol = solve_lp(cost, G, h, context=f"q-stage t={t}")
    y = sol.ineq_duals
    dstate = ax.T @ y[row:]
    if r:
        dstate = dstate + cs.G_x.T @ y[2 * m:2 * m + r]
    return QStageSolution(value=sol.obj, u=sol.x[:m], theta=sol.x[m:m + k],
                          dstate=dstate)


class QPolicy:
    """Memoized (t, x) -> (u, theta) map induced by the pools."""

    def __init__(self, problem: SocProblem, risk: RiskMeasure, qpools: list,
                 boxes: list):
        self.problem = problem
        self.risk = risk
        self.qpools = qpools
        self.boxes = boxes
        self._memo: dict = {}

    def __call__(self, t: int, x: np.ndarray):
        key = (t, x.tobytes())
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        sol = solve_q_stage(self.problem, t, x, self.qpools[t], self.boxes[t])
        out = (sol.u, sol.theta)
        self._memo[key] = out
        return out


@dataclass
class QTrainState:
    problem: SocProblem
    risk: RiskMeasure
    options: TrainOptions
    qpools: list = None  # qpools[t] models Q_t, t = 1..T; [0] unused
    boxes: list = None
    rng: np.random.Generator = None
    iteration: int = 0
    history: list[BoundsRecord] = field(default_factory=list)
    delegate: object = None  # value-variant TrainState when theta_dim == 0

    def lower_bound(self) -> float:
        if self.delegate is not None:
            return self.delegate.lower_bound
        return solve_q_stage(self.problem, 1, self.problem.initial_state,
                             self.qpools[1], self.boxes[1]).value

    def policy(self):
        if self.delegate is not None:
            from risksddp.evaluation import PoolPolicy

            return PoolPolicy(self.problem, self.risk, self.delegate.pools)
        return QPolicy(self.problem, self.risk, self.qpools, self.boxes)

    def augmented_pools(self) -> list:
        """Pools over (x, u, theta), materializing the delegate's if needed."""
        if self.delegate is None:
            return self.qpools
        out: list = [None]
        for t in range(1, self.problem.stages + 1):
            m = self.problem.control_dims[t - 1]
            pool = CutPool(self.problem.state_dims[t - 1] + m)
            src = self.delegate.pools[t]
            for i in range(len(src)):
                grad = np.concatenate([src.a_view(len(src))[i], np.zeros(m)])
                pool.add(float(src.h_view(len(src))[i]), grad)
            out.append(pool)
        return out


def _initial_qpools(problem: SocProblem, risk: RiskMeasure,
                    boxes: list) -> list:
    vlb = problem.value_lower_bounds()
    pools: list = [None]
    for t in range(1, problem.stages + 1):
        dim = (problem.state_dims[t - 1] + problem.control_dims[t - 1]
               + risk.theta_dim)
        pool = CutPool(dim)
        pool.add_constant(vlb[t - 1])
        pools.append(pool)
    return pools


def new_q_state(problem: SocProblem, risk: RiskMeasure,
                options: TrainOptions) -> QTrainState:
    if risk.theta_dim == 0:
        from risksddp.engine import new_state

        return QTrainState(problem=problem, risk=risk, options=options,
                           delegate=new_state(problem, risk, options))
    boxes = [None] + [theta_box(problem, risk, t)
                      for t in range(1, problem.stages + 1)]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(options.seed, 1)))
    return QTrainState(problem=problem, risk=risk, options=options,
                       qpools=_initial_qpools(problem, risk, boxes),
                       boxes=boxes, rng=rng)


def _anchor_theta(risk: RiskMeasure, y: np.ndarray, probs: np.ndarray,
                  theta: np.ndarray) -> np.ndarray:
    """Keep the iterate's parameter unless it makes the penalty blow up."""
    if risk.kind != "kl":
        return theta
    vals = risk.values_at(y, theta)
    best = risk.minimize_theta(DiscreteDistribution(y, probs))
    ref = float(probs @ risk.values_at(y, best))
    if not np.all(np.isfinite(vals)) or float(probs @ vals) > ref + 10.0 * (
            1.0 + abs(ref)):
        return best
    return theta


def _backward_cut(problem: SocProblem, risk: RiskMeasure, state: QTrainState,
                  t: int, x: np.ndarray, u: np.ndarray,
                  theta: np.ndarray) -> None:
    """Extract one cut for Q_t at the point (x, u, theta)."""
    reals = problem.realizations[t - 1]
    probs = problem.stage_probs(t)
    n = len(reals)
    vs = np.empty(n)
    dvs, pieces = [], []
    for j, real in enumerate(reals):
        xn = real.next_state(x, u)
        if t == problem.stages:
            vs[j] = problem.terminal_value(xn)
            dvs.append(problem.terminal_subgrad(xn))
        else:
            inner = solve_q_stage(problem, t + 1, xn, state.qpools[t + 1],
                                  state.boxes[t + 1])
            vs[j] = inner.value
            dvs.append(inner.dstate)
        piece_vals = real.cost_pieces_at(x, u)
        q = int(np.argmax(piece_vals))
        pieces.append(q)
        vs[j] += float(piece_vals[q])
    theta = _anchor_theta(risk, vs, probs, theta)
    w = float(probs @ risk.values_at(vs, theta))
    rho = risk.grads_at(vs, theta)
    gx = np.zeros(len(x))
    gu = np.zeros(len(u))
    gth = np.zeros(risk.theta_dim)
    for j, real in enumerate(reals):
        scale = probs[j] * rho[j]
        gx += scale * (real.cost_cx[pieces[j]] + real.A.T @ dvs[j])
        gu += scale * (real.cost_cu[pieces[j]] + real.B.T @ dvs[j])
        gth += probs[j] * risk.theta_grad(float(vs[j]), theta)
    grad = np.concatenate([gx, gu, gth])
    point = np.concatenate([x, u, theta])
    state.qpools[t].add(w - float(grad @ point), grad)


def train_q(problem: SocProblem, risk: RiskMeasure,
            options: TrainOptions | None = None,
            state: QTrainState | None = None) -> QTrainState:
    """Run iterations until options.iterations, resuming from state if given."""
    from risksddp.engine import train as train_value
    from risksddp.evaluation import evaluate_policy

    options = options or TrainOptions()
    if state is None:
        state = new_q_state(problem, risk, options)
    else:
        state.options = options
    if state.delegate is not None:
        state.delegate = train_value(problem, risk, options,
                                     state=state.delegate)
        state.iteration = state.delegate.iteration
        state.history = state.delegate.history
        return state

    T = problem.stages
    zval = options.critical_value()
    while state.iteration < options.iterations:
        k = state.iteration + 1
        try:
            indices = problem.sample_indices(state.rng)
            x = problem.initial_state.copy()
            points = []
            for t in range(1, T + 1):
                sol = solve_q_stage(problem, t, x, state.qpools[t],
                                    state.boxes[t])
                points.append((x, sol.u, sol.theta))
                x = problem.realizations[t - 1][indices[t - 1]].next_state(
                    x, sol.u)
            for t in range(T, 0, -1):
                xt, ut, tht = points[t - 1]
                if options.backward_resolve:
                    sol = solve_q_stage(problem, t, xt, state.qpools[t],
                                        state.boxes[t])
                    ut, tht = sol.u, sol.theta
                _backward_cut(problem, risk, state, t, xt, ut, tht)
            state.iteration = k
            lower = state.lower_bound()
            record = BoundsRecord(iteration=k, lower_bound=lower)
            if options.eval_every > 0 and k % options.eval_every == 0:
                result = evaluate_policy(
                    problem, risk, state.policy(), options.eval_samples,
                    seed=(options.seed, 2, k), z_value=zval,
                    threads=options.eval_threads)
                record.mean_v1 = result.mean
                record.sigma = result.sigma
                record.upper_bound = result.upper_bound
                log.info("iteration %d: lower %.6g upper %.6g", k, lower,
                         result.upper_bound)
            else:
                log.debug("iteration %d: lower %.6g", k, lower)
            state.history.append(record)
            if (options.checkpoint_path and options.checkpoint_every > 0
                    and k % options.checkpoint_every == 0):
                save_q_checkpoint(state, options.checkpoint_path)
        except Exception:
            if options.checkpoint_path:
                save_q_checkpoint(state, options.checkpoint_path)
            raise
    return state


def q_state_to_config(state: QTrainState) -> dict:
    from risksddp.engine import state_to_config

    if state.delegate is not None:
        inner = state_to_config(state.delegate)
        return {"version": 1, "variant": "qfactor",
                "problem_name": state.problem.name, "delegate": inner}
    return {
        "version": 1,
        "variant": "qfactor",
        "problem_name": state.problem.name,
        "risk": state.risk.as_config(),
        "iteration": state.iteration,
        "seed": state.options.seed,
        "pools": [state.qpools[t].to_config()
                  for t in range(1, state.problem.stages + 1)],
        "rng_state": state.rng.bit_generator.state,
        "history": [[rec.iteration, rec.lower_bound, rec.mean_v1, rec.sigma,
                     rec.upper_bound, rec.wall_time_ms]
                    for rec in state.history],
    }


def q_state_from_config(problem: SocProblem, cfg: dict,
                        options: TrainOptions | None = None) -> QTrainState:
    from risksddp.engine import state_from_config

    if cfg.get("variant") != "qfactor":
        raise ValueError(f"variant: expected 'qfactor', got {cfg.get('variant')!r}")
    if cfg.get("problem_name") != problem.name:
        raise ValueError(
            f"checkpoint was trained on {cfg.get('problem_name')!r}, "
            f"not {problem.name!r}")
    if "delegate" in cfg:
        inner = state_from_config(problem, cfg["delegate"], options)
        state = QTrainState(problem=problem, risk=inner.risk,
                            options=inner.options, delegate=inner)
        state.iteration = inner.iteration
        state.history = inner.history
        return state
    risk = risk_measure_from_config(cfg["risk"])
    options = options or TrainOptions(seed=cfg["seed"])
    state = new_q_state(problem, risk, options)
    pools: list = [None]
    for t, pcfg in enumerate(cfg["pools"], start=1):
        pool = CutPool.from_config(pcfg)
        if pool.dim != state.qpools[t].dim:
            raise ValueError(f"pools[{t - 1}]: dimension mismatch")
        pools.append(pool)
    state.qpools = pools
    state.iteration = cfg["iteration"]
    state.rng.bit_generator.state = cfg["rng_state"]
    state.history = [BoundsRecord(iteration=row[0], lower_bound=row[1],
                                  mean_v1=row[2], sigma=row[3],
                                  upper_bound=row[4], wall_time_ms=row[5])
                     for row in cfg.get("history", [])]
    return state


def save_q_checkpoint(state: QTrainState, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(q_state_to_config(state), fh, sort_keys=True)
        fh.write("\n")


def load_q_checkpoint(problem: SocProblem, path: str,
                      options: TrainOptions | None = None) -> QTrainState:
    with open(path, encoding="utf-8") as fh:
        return q_state_from_config(problem, json.load(fh), options)

"""Cutting-plane training loop for the risk-adjusted control problem.

Each iteration samples one scenario path, solves the stage problems
forward to collect trial states, and appends one cut per stage to the
value-function pools.  The deterministic lower bound is the stage-1
pool evaluated at the initial state; it is nondecreasing because pools
only grow.  A statistical upper bound is computed every few iterations
by simulating the current policy.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from risksddp.cuts import CutPool
from risksddp.model import SocProblem
from risksddp.risk import RiskMeasure, risk_measure_from_config
from risksddp.stage import StageSolution, StageWorkspace, solve_stage

log = logging.getLogger("risksddp.engine")


@dataclass
class TrainOptions:
    iterations: int = 100
    seed: int = 0
    eval_every: int = 10
    eval_samples: int = 10
    z_value: float = 2.0
    beta: float | None = None
    backward_resolve: bool = False
    eval_threads: int = 1
    timing: bool = False
    checkpoint_path: str | None = None
    checkpoint_every: int = 0

    def critical_value(self) -> float:
        if self.beta is not None:
            return float(NormalDist().inv_cdf(1.0 - self.beta))
        return self.z_value


@dataclass
class BoundsRecord:
    iteration: int
    lower_bound: float
    mean_v1: float | None = None
    sigma: float | None = None
    upper_bound: float | None = None
    wall_time_ms: int = 0


@dataclass
class TrainState:
    problem: SocProblem
    risk: RiskMeasure
    options: TrainOptions
    pools: list  # pools[t] approximates V_t, t = 1..T+1; pools[0] unused
    workspace: StageWorkspace
    rng: np.random.Generator
    iteration: int = 0
    history: list[BoundsRecord] = field(default_factory=list)

    @property
    def lower_bound(self) -> float:
        return self.pools[1].value(self.problem.initial_state)


def initial_pools(problem: SocProblem) -> list:
    """One pool per stage, seeded with the interval lower bound."""
    vlb = problem.value_lower_bounds()
    pools: list = [None]
    for t in range(1, problem.stages + 1):
        pool = CutPool(problem.state_dims[t - 1])
        pool.add_constant(vlb[t - 1])
        pools.append(pool)
    pools.append(CutPool.from_affine(problem.terminal_cx, problem.terminal_c0))
    return pools


def _training_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, 1)))


def new_state(problem: SocProblem, risk: RiskMeasure,
              options: TrainOptions) -> TrainState:
    return TrainState(
        problem=problem, risk=risk, options=options,
        pools=initial_pools(problem), workspace=StageWorkspace(),
        rng=_training_rng(options.seed))


def forward_pass(problem: SocProblem, pools: list, risk: RiskMeasure,
                 indices: list[int], workspace: StageWorkspace | None = None,
                 iteration: int = 0):
    """Simulate one path, returning the trajectory and stage solutions."""
    from risksddp.evaluation import Trajectory

    x = problem.initial_state.copy()
    states = [x]
    controls, thetas, costs = [], [], []
    sols: list[StageSolution] = []
    for t in range(1, problem.stages + 1):
        try:
            sol = solve_stage(problem, t, x, risk, pools[t + 1],
                              workspace=workspace)
        except Exception as exc:
            raise type(exc)(f"iteration {iteration}, stage {t}: {exc}") from exc
        sols.append(sol)
        r = problem.realizations[t - 1][indices[t - 1]]
        controls.append(sol.u)
        thetas.append(sol.theta)
        costs.append(r.cost_value(x, sol.u))
        x = r.next_state(x, sol.u)
        states.append(x)
    costs.append(problem.terminal_value(x))
    traj = Trajectory(states=states, controls=controls, thetas=thetas,
                      realized_costs=costs, indices=list(indices))
    return traj, sols


def train(problem: SocProblem, risk: RiskMeasure,
          options: TrainOptions | None = None,
          state: TrainState | None = None) -> TrainState:
    """Run iterations until options.iterations, resuming from state if given."""
    from risksddp.evaluation import evaluate_policy

    options = options or TrainOptions()
    if state is None:
        state = new_state(problem, risk, options)
    else:
        state.options = options
    T = problem.stages
    zval = options.critical_value()

    while state.iteration < options.iterations:
        started = time.perf_counter() if options.timing else 0.0
        k = state.iteration + 1
        try:
            indices = problem.sample_indices(state.rng)
            traj, sols = forward_pass(problem, state.pools, risk, indices,
                                      workspace=state.workspace, iteration=k)
            if options.backward_resolve:
                for t in range(T, 0, -1):
                    sol = solve_stage(problem, t, traj.states[t - 1], risk,
                                      state.pools[t + 1], workspace=state.workspace)
                    state.pools[t].add(sol.cut_intercept, sol.cut_gradient)
            else:
                for t in range(T, 0, -1):
                    sol = sols[t - 1]
                    state.pools[t].add(sol.cut_intercept, sol.cut_gradient)
            state.iteration = k
            lower = state.lower_bound
            record = BoundsRecord(iteration=k, lower_bound=lower)
            if options.eval_every > 0 and k % options.eval_every == 0:
                result = evaluate_policy(
                    problem, risk, state.pools, options.eval_samples,
                    seed=(options.seed, 2, k), z_value=zval,
                    threads=options.eval_threads)
                record.mean_v1 = result.mean
                record.sigma = result.sigma
                record.upper_bound = result.upper_bound
                log.info("iteration %d: lower %.6g upper %.6g", k, lower,
                         result.upper_bound)
            else:
                log.debug("iteration %d: lower %.6g", k, lower)
            if options.timing:
                record.wall_time_ms = int(
                    round(1000.0 * (time.perf_counter() - started)))
            state.history.append(record)
            if (options.checkpoint_path and options.checkpoint_every > 0
                    and k % options.checkpoint_every == 0):
                save_checkpoint(state, options.checkpoint_path)
        except Exception:
            if options.checkpoint_path:
                save_checkpoint(state, options.checkpoint_path)
            raise
    return state


# reporting and persistence ---------------------------------------------------

CSV_HEADER = "iteration,lower_bound,mean_v1,sigma,upper_bound,wall_time_ms"


def _cell(value: float | None) -> str:
    return "" if value is None else repr(value)


def bounds_csv(history: list[BoundsRecord]) -> str:
    lines = [CSV_HEADER]
    for rec in history:
        lines.append(",".join([
            str(rec.iteration), repr(rec.lower_bound), _cell(rec.mean_v1),
            _cell(rec.sigma), _cell(rec.upper_bound), str(rec.wall_time_ms)]))
    return "\n".join(lines) + "\n"


def state_to_config(state: TrainState) -> dict:
    return {
        "version": 1,
        "variant": "value",
        "problem_name": state.problem.name,
        "risk": state.risk.as_config(),
        "iteration": state.iteration,
        "seed": state.options.seed,
        "pools": [state.pools[t].to_config()
                  for t in range(1, state.problem.stages + 1)],
        "rng_state": state.rng.bit_generator.state,
        "workspace": state.workspace.hints_config(),
        "history": [[rec.iteration, rec.lower_bound, rec.mean_v1, rec.sigma,
                     rec.upper_bound, rec.wall_time_ms] for rec in state.history],
    }


def state_from_config(problem: SocProblem, cfg: dict,
                      options: TrainOptions | None = None) -> TrainState:
    if cfg.get("variant", "value") != "value":
        raise ValueError(f"variant: expected 'value', got {cfg.get('variant')!r}")
    if cfg.get("problem_name") != problem.name:
        raise ValueError(
            f"checkpoint was trained on {cfg.get('problem_name')!r}, "
            f"not {problem.name!r}")
    risk = risk_measure_from_config(cfg["risk"])
    options = options or TrainOptions(seed=cfg["seed"])
    state = new_state(problem, risk, options)
    pools: list = [None]
    for t, pcfg in enumerate(cfg["pools"], start=1):
        pool = CutPool.from_config(pcfg)
        if pool.dim != problem.state_dims[t - 1]:
            raise ValueError(f"pools[{t - 1}]: dimension mismatch")
        pools.append(pool)
    pools.append(CutPool.from_affine(problem.terminal_cx, problem.terminal_c0))
    state.pools = pools
    state.iteration = cfg["iteration"]
    state.rng.bit_generator.state = cfg["rng_state"]
    state.workspace.load_hints(cfg.get("workspace", {}))
    state.history = [BoundsRecord(iteration=row[0], lower_bound=row[1],
                                  mean_v1=row[2], sigma=row[3],
                                  upper_bound=row[4], wall_time_ms=row[5])
                     for row in cfg.get("history", [])]
    return state


def save_checkpoint(state: TrainState, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state_to_config(state), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(problem: SocProblem, path: str,
                    options: TrainOptions | None = None) -> TrainState:
    with open(path, encoding="utf-8") as fh:
        return state_from_config(problem, json.load(fh), options)

"""Statistical policy evaluation for the trained cut pools.

The policy induced by the pools is simulated on sampled scenario paths.
Along each path the per-stage risk parameters are fixed by the stage
solve (they depend only on the current stage and state), and the path
value is the backward composition of the per-outcome penalty applied to
realized cost plus continuation value.  The sample mean plus a normal
quantile of the standard error gives the reported upper confidence
bound.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from risksddp.model import SocProblem
from risksddp.risk import RiskMeasure
from risksddp.stage import StageWorkspace, solve_stage

PATH_ENUMERATION_BUDGET = 10 ** 6


@dataclass
class Trajectory:
    """One forward path: states x_1..x_{T+1}, controls, and realized costs.

    realized_costs has T+1 entries; the last one is the terminal cost.
    recursion_values is filled by path_recursion.
    """

    states: list[np.ndarray]
    controls: list[np.ndarray]
    thetas: list[np.ndarray]
    realized_costs: list[float]
    indices: list[int]
    recursion_values: list[float] | None = None


@dataclass
class EvaluationResult:
    samples: np.ndarray
    mean: float
    sigma: float
    z_value: float
    upper_bound: float
    beta: float | None = None
    exact: bool = False


class PoolPolicy:
    """Maps (stage, state) to the pool-induced decision, memoized.

    Solves are canonical (warm=False) so the decision is a function of
    (t, x) alone, independent of call order or thread interleaving.
    """

    def __init__(self, problem: SocProblem, risk: RiskMeasure, pools: list):
        self.problem = problem
        self.risk = risk
        self.pools = pools
        # scratch caches are not safe to share across threads, and with
        # warm=False they never influence the solution anyway
        self._tls = threading.local()
        self._memo: dict = {}

    @property
    def workspace(self) -> StageWorkspace:
        ws = getattr(self._tls, "workspace", None)
        if ws is None:
            ws = StageWorkspace()
            self._tls.workspace = ws
        return ws

    def __call__(self, t: int, x: np.ndarray):
        key = (t, x.tobytes())
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        sol = solve_stage(self.problem, t, x, self.risk, self.pools[t + 1],
                          workspace=self.workspace, warm=False)
        out = (sol.u, sol.theta)
        self._memo[key] = out
        return out


def _as_policy(problem: SocProblem, risk: RiskMeasure, policy):
    """Accept either a pools list or a callable (t, x) -> (u, theta)."""
    if callable(policy):
        return policy
    return PoolPolicy(problem, risk, policy)


def _entropy(seed) -> tuple:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def simulate_path(problem: SocProblem, risk: RiskMeasure, policy,
                  indices: list[int]) -> Trajectory:
    step = _as_policy(problem, risk, policy)
    x = problem.initial_state.copy()
    states = [x]
    controls, thetas, costs = [], [], []
    for t in range(1, problem.stages + 1):
        u, theta = step(t, x)
        r = problem.realizations[t - 1][indices[t - 1]]
        controls.append(u)
        thetas.append(theta)
        costs.append(r.cost_value(x, u))
        x = r.next_state(x, u)
        states.append(x)
    costs.append(problem.terminal_value(x))
    return Trajectory(states=states, controls=controls, thetas=thetas,
                      realized_costs=costs, indices=list(indices))


def path_recursion(problem: SocProblem, risk: RiskMeasure,
                   trajectory: Trajectory) -> float:
    """Backward value recursion along one path using its stored parameters.

    Returns the stage-1 value and fills trajectory.recursion_values with
    [v_1, ..., v_{T+1}].
    """
    T = problem.stages
    values = [0.0] * (T + 1)
    values[T] = trajectory.realized_costs[T]
    v = values[T]
    for t in range(T, 0, -1):
        z = trajectory.realized_costs[t - 1] + v
        v = float(risk.value(z, trajectory.thetas[t - 1]))
        values[t - 1] = v
    trajectory.recursion_values = values
    return v


def _path_value(problem, risk, step, indices) -> float:
    traj = simulate_path(problem, risk, step, indices)
    return path_recursion(problem, risk, traj)


def evaluate_policy(problem: SocProblem, risk: RiskMeasure, policy,
                    samples: int, seed=0, z_value: float = 2.0,
                    beta: float | None = None,
                    threads: int = 1) -> EvaluationResult:
    """Sample paths under the policy and report mean + confidence bound.

    policy is either the pools list or a callable (t, x) -> (u, theta).
    Per-path randomness derives from (seed, path index) so results do
    not depend on the number of worker threads.
    """
    if samples < 2:
        raise ValueError("samples: need at least 2 paths for the deviation")
    step = _as_policy(problem, risk, policy)
    if beta is not None:
        z_value = float(NormalDist().inv_cdf(1.0 - beta))
    base = _entropy(seed)
    all_indices = []
    for i in range(samples):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=base + (i,)))
        all_indices.append(problem.sample_indices(rng))

    values = np.empty(samples, dtype=float)
    path_memo: dict = {}

    def run(i: int) -> None:
        key = tuple(all_indices[i])
        hit = path_memo.get(key)
        if hit is None:
            hit = _path_value(problem, risk, step, all_indices[i])
            path_memo[key] = hit
        values[i] = hit

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, range(samples)))
    else:
        for i in range(samples):
            run(i)

    if np.isfinite(values).all():
        mean = float(np.mean(values))
        sigma = float(np.std(values, ddof=1))
        upper = mean + z_value * sigma / np.sqrt(samples)
    else:
        # a policy whose parameter choices blow up some path; no bound
        mean, sigma, upper = math.inf, math.inf, math.inf
    return EvaluationResult(samples=values, mean=mean, sigma=sigma,
                            z_value=z_value, upper_bound=float(upper),
                            beta=beta)


def enumerate_expected_v1(problem: SocProblem, risk: RiskMeasure, policy,
                          budget: int = PATH_ENUMERATION_BUDGET) -> float:
    """Exact expectation of the path value over every scenario path.

    Walks the scenario tree once, merging value distributions at shared
    states, so the cost is bounded by the number of distinct paths.
    """
    n_paths = 1
    for t in range(1, problem.stages + 1):
        n_paths *= problem.n_realizations(t)
    if n_paths > budget:
        raise ValueError(
            f"enumeration needs {n_paths} paths, budget is {budget}")
    step = _as_policy(problem, risk, policy)
    memo: dict = {}

    def dist(t: int, x: np.ndarray):
        """Distribution of v_t given x_t = x, as (values, probs) arrays."""
        if t == problem.stages + 1:
            return (np.array([problem.terminal_value(x)]), np.array([1.0]))
        key = (t, x.tobytes())
        hit = memo.get(key)
        if hit is not None:
            return hit
        u, theta = step(t, x)
        parts_v, parts_p = [], []
        for j, r in enumerate(problem.realizations[t - 1]):
            cost = r.cost_value(x, u)
            tail_v, tail_p = dist(t + 1, r.next_state(x, u))
            parts_v.append(risk.values_at(cost + tail_v, theta))
            parts_p.append(r.prob * tail_p)
        out = (np.concatenate(parts_v), np.concatenate(parts_p))
        memo[key] = out
        return out

    values, probs = dist(1, problem.initial_state.copy())
    return float(values @ probs)

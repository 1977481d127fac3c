"""Problem data for convex stochastic optimal control.

A problem has stages t = 1..T with affine dynamics

    x_{t+1} = A x_t + B u_t + b

where (A, B, b) and the convex piecewise-linear stage cost depend on
the finitely supported, stagewise independent noise.  Controls are
boxed (finite bounds are required; they feed the interval bounds used
to initialize value-function approximations) plus optional linear rows
that may couple in the state.  A convex piecewise-linear terminal cost
closes the horizon.

Relatively complete recourse is the modeler's responsibility: the
control set must stay nonempty at every reachable state, as in the
hydro generator where a deficit control absorbs any demand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np


def _as_matrix(data, rows: int, cols: int, where: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape != (rows, cols):
        raise ValueError(f"{where}: expected shape ({rows}, {cols}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{where}: non-finite entry")
    return arr


def _as_vector(data, size: int, where: str, allow_inf: bool = False) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.shape != (size,):
        raise ValueError(f"{where}: expected length {size}, got shape {arr.shape}")
    if not allow_inf and not np.all(np.isfinite(arr)):
        raise ValueError(f"{where}: non-finite entry")
    return arr


def _row_interval(C: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Componentwise range of C @ v for v in [lo, hi]."""
    pos = np.maximum(C, 0.0)
    neg = np.minimum(C, 0.0)
    return pos @ lo + neg @ hi, pos @ hi + neg @ lo


@dataclass
class ControlSet:
    """Box bounds plus rows G_u u <= h - G_x x."""

    lb: np.ndarray
    ub: np.ndarray
    G_u: np.ndarray
    G_x: np.ndarray
    h: np.ndarray

    @classmethod
    def box(cls, lb, ub) -> "ControlSet":
        lb = np.asarray(lb, dtype=np.float64)
        m = lb.shape[0]
        return cls(lb=lb, ub=np.asarray(ub, dtype=np.float64),
                   G_u=np.zeros((0, m)), G_x=np.zeros((0, 0)), h=np.zeros(0))

    @property
    def dim(self) -> int:
        return self.lb.shape[0]

    @property
    def n_rows(self) -> int:
        return self.G_u.shape[0]


@dataclass
class StageRealization:
    """One noise atom: probability, dynamics and stage cost pieces."""

    prob: float
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    cost_cx: np.ndarray
    cost_cu: np.ndarray
    cost_c0: np.ndarray

    def next_state(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ u + self.b

    def cost_pieces_at(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.cost_cx @ x + self.cost_cu @ u + self.cost_c0

    def cost_value(self, x: np.ndarray, u: np.ndarray) -> float:
        return float(np.max(self.cost_pieces_at(x, u)))

    def cost_piece(self, x: np.ndarray, u: np.ndarray) -> int:
        return int(np.argmax(self.cost_pieces_at(x, u)))


@dataclass
class SocProblem:
    stages: int
    state_dims: list[int]
    control_dims: list[int]
    initial_state: np.ndarray
    controls: list[ControlSet]
    realizations: list[list[StageRealization]]
    terminal_cx: np.ndarray
    terminal_c0: np.ndarray
    risk_config: dict | None = None
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def n_realizations(self, t: int) -> int:
        return len(self.realizations[t - 1])

    def stage_probs(self, t: int) -> np.ndarray:
        key = ("probs", t)
        if key not in self._cache:
            self._cache[key] = np.array(
                [r.prob for r in self.realizations[t - 1]], dtype=np.float64)
        return self._cache[key]

    def control_set(self, t: int) -> ControlSet:
        return self.controls[t - 1]

    def terminal_value(self, x: np.ndarray) -> float:
        return float(np.max(self.terminal_cx @ x + self.terminal_c0))

    def terminal_subgrad(self, x: np.ndarray) -> np.ndarray:
        return self.terminal_cx[int(np.argmax(self.terminal_cx @ x + self.terminal_c0))]

    # interval bookkeeping -------------------------------------------------

    def reach_boxes(self):
        """Per-stage interval hulls of the reachable states, t = 1..T+1."""
        if "reach" in self._cache:
            return self._cache["reach"]
        boxes = [(self.initial_state.copy(), self.initial_state.copy())]
        for t in range(1, self.stages + 1):
            cs = self.control_set(t)
            lo_prev, hi_prev = boxes[-1]
            lo_t = np.full(self.state_dims[t], np.inf)
            hi_t = np.full(self.state_dims[t], -np.inf)
            for r in self.realizations[t - 1]:
                alo, ahi = _row_interval(r.A, lo_prev, hi_prev)
                blo, bhi = _row_interval(r.B, cs.lb, cs.ub)
                lo_t = np.minimum(lo_t, alo + blo + r.b)
                hi_t = np.maximum(hi_t, ahi + bhi + r.b)
            boxes.append((lo_t, hi_t))
        self._cache["reach"] = boxes
        return boxes

    def stage_cost_intervals(self):
        """Per-stage (lower, upper) bounds of the stage cost, t = 1..T+1.

        The entry at T+1 bounds the terminal cost.  Lower bounds come
        from the best single piece, upper bounds from the worst piece,
        both over the reach box and control box.
        """
        if "cost_iv" in self._cache:
            return self._cache["cost_iv"]
        boxes = self.reach_boxes()
        out = []
        for t in range(1, self.stages + 1):
            cs = self.control_set(t)
            xlo, xhi = boxes[t - 1]
            lo_t, hi_t = np.inf, -np.inf
            for r in self.realizations[t - 1]:
                plo_x, phi_x = _row_interval(r.cost_cx, xlo, xhi)
                plo_u, phi_u = _row_interval(r.cost_cu, cs.lb, cs.ub)
                plo = plo_x + plo_u + r.cost_c0
                phi = phi_x + phi_u + r.cost_c0
                lo_t = min(lo_t, float(np.max(plo)))
                hi_t = max(hi_t, float(np.max(phi)))
            out.append((lo_t, hi_t))
        xlo, xhi = boxes[self.stages]
        plo, phi = _row_interval(self.terminal_cx, xlo, xhi)
        out.append((float(np.max(plo + self.terminal_c0)),
                    float(np.max(phi + self.terminal_c0))))
        self._cache["cost_iv"] = out
        return out

    def value_lower_bounds(self) -> list[float]:
        """L_t <= V_t everywhere reachable, t = 1..T+1 (suffix cost sums)."""
        iv = self.stage_cost_intervals()
        out = [0.0] * (self.stages + 1)
        out[self.stages] = iv[self.stages][0]
        for t in range(self.stages - 1, -1, -1):
            out[t] = iv[t][0] + out[t + 1]
        return out

    def value_upper_bounds(self) -> list[float]:
        """Upper bounds on V_t over the reach box, t = 1..T+1."""
        iv = self.stage_cost_intervals()
        out = [0.0] * (self.stages + 1)
        out[self.stages] = iv[self.stages][1]
        for t in range(self.stages - 1, -1, -1):
            out[t] = iv[t][1] + out[t + 1]
        return out

    # sampling -------------------------------------------------------------

    def _cum_probs(self, t: int) -> np.ndarray:
        key = ("cum", t)
        if key not in self._cache:
            self._cache[key] = np.cumsum(self.stage_probs(t))
        return self._cache[key]

    def sample_indices(self, rng: np.random.Generator) -> list[int]:
        """Draw one realization index per stage."""
        out = []
        for t in range(1, self.stages + 1):
            cum = self._cum_probs(t)
            j = int(np.searchsorted(cum, rng.random(), side="right"))
            out.append(min(j, cum.size - 1))
        return out


def validate_problem(problem: SocProblem) -> None:
    """Structural checks; raises ValueError naming the offending field."""
    from risksddp.lp import LPInfeasibleError, solve_lp

    T = problem.stages
    if T < 1:
        raise ValueError("stages: must be >= 1")
    if len(problem.state_dims) != T + 1:
        raise ValueError("state_dims: need stages + 1 entries")
    if len(problem.control_dims) != T:
        raise ValueError("control_dims: need one entry per stage")
    if len(problem.controls) != T or len(problem.realizations) != T:
        raise ValueError("stage_data: need one entry per stage")
    _as_vector(problem.initial_state, problem.state_dims[0], "initial_state")

    for t in range(1, T + 1):
        n, n_next = problem.state_dims[t - 1], problem.state_dims[t]
        m = problem.control_dims[t - 1]
        cs = problem.controls[t - 1]
        where = f"stage_data[{t - 1}].control_set"
        _as_vector(cs.lb, m, f"{where}.lb")
        _as_vector(cs.ub, m, f"{where}.ub")
        if np.any(cs.lb > cs.ub):
            raise ValueError(f"{where}: lb exceeds ub")
        r_rows = cs.G_u.shape[0]
        _as_matrix(cs.G_u, r_rows, m, f"{where}.G_u")
        if cs.G_x.size or r_rows:
            _as_matrix(cs.G_x, r_rows, n, f"{where}.G_x")
        _as_vector(cs.h, r_rows, f"{where}.h")

        reals = problem.realizations[t - 1]
        if not reals:
            raise ValueError(f"stage_data[{t - 1}].realizations: empty")
        psum = 0.0
        for j, r in enumerate(reals):
            rwhere = f"stage_data[{t - 1}].realizations[{j}]"
            if not (r.prob > 0.0):
                raise ValueError(f"{rwhere}.prob: must be positive")
            psum += r.prob
            _as_matrix(r.A, n_next, n, f"{rwhere}.A")
            _as_matrix(r.B, n_next, m, f"{rwhere}.B")
            _as_vector(r.b, n_next, f"{rwhere}.b")
            q = r.cost_cx.shape[0]
            if q < 1:
                raise ValueError(f"{rwhere}.cost: needs at least one piece")
            _as_matrix(r.cost_cx, q, n, f"{rwhere}.cost.cx")
            _as_matrix(r.cost_cu, q, m, f"{rwhere}.cost.cu")
            _as_vector(r.cost_c0, q, f"{rwhere}.cost.c0")
        if abs(psum - 1.0) > 1e-12:
            raise ValueError(
                f"stage_data[{t - 1}].realizations: probabilities sum to {psum!r}, not 1")

    qT = problem.terminal_cx.shape[0]
    _as_matrix(problem.terminal_cx, qT, problem.state_dims[T], "terminal_cost.cx")
    _as_vector(problem.terminal_c0, qT, "terminal_cost.c0")

    # control sets must be nonempty somewhere on the reach box
    boxes = problem.reach_boxes()
    for t in range(1, T + 1):
        cs = problem.controls[t - 1]
        m, n = cs.dim, problem.state_dims[t - 1]
        xlo, xhi = boxes[t - 1]
        G = [np.hstack([np.eye(m), np.zeros((m, n))]),
             np.hstack([-np.eye(m), np.zeros((m, n))]),
             np.hstack([np.zeros((n, m)), np.eye(n)]),
             np.hstack([np.zeros((n, m)), -np.eye(n)])]
        h = [cs.ub, -cs.lb, xhi, -xlo]
        if cs.n_rows:
            G_x = cs.G_x if cs.G_x.size else np.zeros((cs.n_rows, n))
            G.append(np.hstack([cs.G_u, G_x]))
            h.append(cs.h)
        try:
            solve_lp(np.zeros(m + n), G=np.vstack(G), h=np.concatenate(h),
                     context=f"stage_data[{t - 1}].control_set feasibility")
        except LPInfeasibleError as exc:
            raise ValueError(
                f"stage_data[{t - 1}].control_set: empty on the reachable box") from exc


# serialization -------------------------------------------------------------


def problem_to_config(problem: SocProblem) -> dict:
    stage_data = []
    for t in range(1, problem.stages + 1):
        cs = problem.controls[t - 1]
        entry = {
            "control_set": {
                "lb": cs.lb.tolist(),
                "ub": cs.ub.tolist(),
            },
            "realizations": [
                {
                    "prob": r.prob,
                    "A": r.A.tolist(),
                    "B": r.B.tolist(),
                    "b": r.b.tolist(),
                    "cost": {
                        "cx": r.cost_cx.tolist(),
                        "cu": r.cost_cu.tolist(),
                        "c0": r.cost_c0.tolist(),
                    },
                }
                for r in problem.realizations[t - 1]
            ],
        }
        if cs.n_rows:
            entry["control_set"]["G_u"] = cs.G_u.tolist()
            entry["control_set"]["G_x"] = cs.G_x.tolist()
            entry["control_set"]["h"] = cs.h.tolist()
        stage_data.append(entry)
    cfg = {
        "version": 1,
        "name": problem.name,
        "stages": problem.stages,
        "state_dims": list(problem.state_dims),
        "control_dims": list(problem.control_dims),
        "initial_state": problem.initial_state.tolist(),
        "stage_data": stage_data,
        "terminal_cost": {
            "cx": problem.terminal_cx.tolist(),
            "c0": problem.terminal_c0.tolist(),
        },
    }
    if problem.risk_config is not None:
        cfg["risk_measure"] = problem.risk_config
    return cfg


def problem_from_config(cfg: dict) -> SocProblem:
    if cfg.get("version") != 1:
        raise ValueError(f"version: expected 1, got {cfg.get('version')!r}")
    T = cfg["stages"]
    state_dims = list(cfg["state_dims"])
    control_dims = list(cfg["control_dims"])
    controls = []
    realizations = []
    for t, entry in enumerate(cfg["stage_data"], start=1):
        m, n = control_dims[t - 1], state_dims[t - 1]
        cdata = entry["control_set"]
        rows = len(cdata.get("h", []))
        cs = ControlSet(
            lb=np.asarray(cdata["lb"], dtype=np.float64),
            ub=np.asarray(cdata["ub"], dtype=np.float64),
            G_u=np.asarray(cdata.get("G_u", np.zeros((0, m))), dtype=np.float64).reshape(rows, m),
            G_x=np.asarray(cdata.get("G_x", np.zeros((0, n))), dtype=np.float64).reshape(rows, n)
            if cdata.get("G_x") is not None else np.zeros((rows, n)),
            h=np.asarray(cdata.get("h", []), dtype=np.float64),
        )
        controls.append(cs)
        reals = [
            StageRealization(
                prob=float(r["prob"]),
                A=np.asarray(r["A"], dtype=np.float64),
                B=np.asarray(r["B"], dtype=np.float64),
                b=np.asarray(r["b"], dtype=np.float64),
                cost_cx=np.asarray(r["cost"]["cx"], dtype=np.float64),
                cost_cu=np.asarray(r["cost"]["cu"], dtype=np.float64),
                cost_c0=np.asarray(r["cost"]["c0"], dtype=np.float64),
            )
            for r in entry["realizations"]
        ]
        realizations.append(reals)
    problem = SocProblem(
        stages=T,
        state_dims=state_dims,
        control_dims=control_dims,
        initial_state=np.asarray(cfg["initial_state"], dtype=np.float64),
        controls=controls,
        realizations=realizations,
        terminal_cx=np.asarray(cfg["terminal_cost"]["cx"], dtype=np.float64),
        terminal_c0=np.asarray(cfg["terminal_cost"]["c0"], dtype=np.float64),
        risk_config=cfg.get("risk_measure"),
        name=cfg.get("name", ""),
    )
    validate_problem(problem)
    return problem


def load_problem(path: str) -> SocProblem:
    with open(path, encoding="utf-8") as fh:
        return problem_from_config(json.load(fh))


def write_problem(problem: SocProblem, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem_to_config(problem), fh, indent=1, sort_keys=True)
        fh.write("\n")


# hydro-thermal generator ----------------------------------------------------


@dataclass
class HydroParams:
    """Knobs for the stylized hydro-thermal scheduling instance."""

    reservoirs: int = 4
    stages: int = 12
    realizations: int = 10
    seed: int = 0
    demand_base: float = 34.0
    demand_swing: float = 0.15
    release_cap: float = 12.0
    spill_cap: float = 30.0
    initial_fill: float = 15.0
    thermal_caps: tuple = (6.0, 6.0, 6.0)
    thermal_costs: tuple = (12.0, 30.0, 75.0)
    deficit_penalty: float = 150.0
    inflow_mean: float = 7.0
    inflow_sigma: float = 1.8
    terminal_water_value: float = 15.0


def lognormal_quantile_atoms(mean: float, sigma: float, n: int) -> np.ndarray:
    """Equal-probability lognormal discretization at quantile midpoints.

    Atom i takes the quantile at level (i - 0.5)/n of the lognormal
    with the given natural-scale mean and standard deviation.
    """
    if n < 1:
        raise ValueError("need at least one atom")
    if mean == 0.0:
        return np.zeros(n)
    if mean < 0.0 or sigma <= 0.0:
        raise ValueError("inflow needs mean > 0 and sigma > 0 (or mean == 0)")
    var_log = math.log(1.0 + (sigma / mean) ** 2)
    mu_log = math.log(mean) - 0.5 * var_log
    nd = NormalDist()
    levels = (np.arange(n) + 0.5) / n
    return np.array([math.exp(mu_log + math.sqrt(var_log) * nd.inv_cdf(p))
                     for p in levels])


def generate_hydrothermal(params: HydroParams) -> SocProblem:
    """Build the stylized reservoir scheduling instance.

    State: stored energy per reservoir.  Controls per stage: release
    and spill per reservoir, thermal generation per ladder rung, and a
    deficit that keeps recourse complete.  Inflows are comonotone
    lognormal atoms entering through the dynamics offset.
    """
    R, T, N = params.reservoirs, params.stages, params.realizations
    if R < 1 or T < 1 or N < 1:
        raise ValueError("reservoirs, stages and realizations must be >= 1")
    L = len(params.thermal_caps)
    if len(params.thermal_costs) != L:
        raise ValueError("thermal_caps and thermal_costs must have equal length")
    rng = np.random.default_rng(np.random.PCG64(params.seed))
    m = 2 * R + L + 1

    res_scale = 1.0 + 0.2 * (2.0 * rng.random(R) - 1.0)
    phase = 2.0 * math.pi * rng.random()
    demand_jitter = 1.0 + 0.05 * (2.0 * rng.random(T) - 1.0)

    A = np.eye(R)
    B = np.hstack([-np.eye(R), -np.eye(R), np.zeros((R, L + 1))])
    cu = np.concatenate([np.zeros(2 * R), np.asarray(params.thermal_costs, dtype=np.float64),
                         [params.deficit_penalty]])

    controls = []
    realizations = []
    for t in range(1, T + 1):
        season = math.sin(2.0 * math.pi * (t - 1) / max(T, 1) + phase)
        demand = params.demand_base * (1.0 + params.demand_swing * season) \
            * demand_jitter[t - 1]
        inflow_factor = 1.0 + 0.3 * math.sin(2.0 * math.pi * (t - 1) / max(T, 1))
        atoms = lognormal_quantile_atoms(
            params.inflow_mean * inflow_factor if params.inflow_mean > 0.0 else 0.0,
            params.inflow_sigma * inflow_factor, N) \
            if params.inflow_mean > 0.0 else np.zeros(N)

        ub = np.concatenate([np.full(R, params.release_cap),
                             np.full(R, params.spill_cap),
                             np.asarray(params.thermal_caps, dtype=np.float64),
                             [demand]])
        # demand balance plus release + spill <= stored energy
        G_u = np.zeros((1 + R, m))
        G_x = np.zeros((1 + R, R))
        h = np.zeros(1 + R)
        G_u[0, :R] = -1.0
        G_u[0, 2 * R:] = -1.0
        h[0] = -demand
        for i in range(R):
            G_u[1 + i, i] = 1.0
            G_u[1 + i, R + i] = 1.0
            G_x[1 + i, i] = -1.0
        controls.append(ControlSet(lb=np.zeros(m), ub=ub, G_u=G_u, G_x=G_x, h=h))

        reals = []
        for j in range(N):
            reals.append(StageRealization(
                prob=1.0 / N,
                A=A.copy(),
                B=B.copy(),
                b=atoms[j] * res_scale,
                cost_cx=np.zeros((1, R)),
                cost_cu=cu.reshape(1, m).copy(),
                cost_c0=np.zeros(1),
            ))
        realizations.append(reals)

    ref = R * params.initial_fill
    wv = params.terminal_water_value
    terminal_cx = np.vstack([np.zeros(R), -wv * np.ones(R)])
    terminal_c0 = np.array([0.0, wv * ref])

    problem = SocProblem(
        stages=T,
        state_dims=[R] * (T + 1),
        control_dims=[m] * T,
        initial_state=np.full(R, params.initial_fill),
        controls=controls,
        realizations=realizations,
        terminal_cx=terminal_cx,
        terminal_c0=terminal_c0,
        name=f"hydrothermal-R{R}-T{T}-N{N}-seed{params.seed}",
    )
    validate_problem(problem)
    return problem

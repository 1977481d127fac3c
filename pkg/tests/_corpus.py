"""Deterministic factory for tiny test instances.

Each instance is small enough for the exact oracles: T in {2, 3},
N in {2, 3}, state and control dimensions in {1, 2}.  Costs are
piecewise affine and nonnegative over the reachable set, controls are
boxed, and every third instance couples the control set to the state.
"""

from __future__ import annotations

import numpy as np

from risksddp.model import (ControlSet, SocProblem, StageRealization,
                            validate_problem)
from risksddp.risk import OCE, Expectation, KLDivergence, MeanAVaR

CORPUS_SIZE = 12


def tiny_instance(index: int) -> SocProblem:
    """Instance #index of the corpus; deterministic in index."""
    rng = np.random.default_rng(np.random.PCG64(9000 + index))
    T = 2 + index % 2
    N = 2 + (index // 2) % 2
    nx = 1 + (index // 4) % 2
    m = 1 + (index // 6) % 2
    coupled = index % 3 == 0

    controls = []
    realizations = []
    for t in range(T):
        lb = np.zeros(m)
        ub = rng.uniform(0.6, 1.6, size=m)
        if coupled:
            # sum of controls limited by a positive slack of the state
            G_u = np.ones((1, m))
            G_x = -0.3 * np.ones((1, nx))
            h = np.array([float(np.sum(ub)) * 0.8])
            cs = ControlSet(lb=lb, ub=ub, G_u=G_u, G_x=G_x, h=h)
        else:
            cs = ControlSet.box(lb, ub)
        controls.append(cs)

        reals = []
        probs = rng.dirichlet(np.ones(N) * 4.0)
        for j in range(N):
            A = rng.uniform(0.3, 0.9) * np.eye(nx)
            B = rng.uniform(-0.6, 0.9, size=(nx, m))
            b = rng.uniform(0.05, 0.5, size=nx)
            pieces = 1 + (index + j) % 2
            cost_cx = rng.uniform(-0.4, 1.0, size=(pieces, nx))
            cost_cu = rng.uniform(0.2, 2.0, size=(pieces, m))
            cost_c0 = rng.uniform(1.0, 3.0, size=pieces)
            reals.append(StageRealization(
                prob=float(probs[j]), A=A, B=B, b=b,
                cost_cx=cost_cx, cost_cu=cost_cu, cost_c0=cost_c0))
        realizations.append(reals)

    terminal_cx = np.vstack([rng.uniform(-0.3, 0.8, size=(1, nx)),
                             np.zeros((1, nx))])
    terminal_c0 = np.array([rng.uniform(0.5, 1.5), 0.1])
    problem = SocProblem(
        stages=T,
        state_dims=[nx] * (T + 1),
        control_dims=[m] * T,
        initial_state=rng.uniform(0.2, 1.0, size=nx),
        controls=controls,
        realizations=realizations,
        terminal_cx=terminal_cx,
        terminal_c0=terminal_c0,
        name=f"tiny-{index}",
    )
    validate_problem(problem)
    return problem


def corpus() -> list[SocProblem]:
    return [tiny_instance(i) for i in range(CORPUS_SIZE)]


def four_kinds() -> list:
    """One representative risk measure per supported kind."""
    return [
        Expectation(),
        MeanAVaR([0.6, 0.4], [0.25]),
        KLDivergence(0.05),
        OCE([0.0], [1.3, 0.7]),
    ]


def kind_tolerance(risk) -> float:
    return 1e-3 if risk.kind == "kl" else 1e-6

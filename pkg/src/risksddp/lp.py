"""Embedded linear programming layer.

Solves desk-scale dense problems

    min  cost . x
    s.t. G x <= h
         E x  = f

with x free.  The free variables are split into positive and negative
parts and the inequalities given slacks, which puts the problem in the
kernel's standard form directly; the kernel's row duals then are the
row multipliers up to sign.  No external solver is involved.

Returned ``ineq_duals`` are the nonnegative multipliers lambda of the
inequality rows, i.e. d(obj)/dh = -lambda and stationarity reads
cost + G'lambda + E'mu = 0 with ``eq_duals`` mu free.

Tolerance contract: returned points are primal feasible and optimal
within about 1e-7 relative; a failed self-check raises
``LPNumericalError`` rather than returning a bad point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from risksddp import kernels


class LPError(Exception):
    """Base class for LP failures."""


class LPInfeasibleError(LPError):
    pass


class LPUnboundedError(LPError):
    pass


class LPNumericalError(LPError):
    pass


@dataclass
class LPSolution:
    x: np.ndarray
    obj: float
    ineq_duals: np.ndarray
    eq_duals: np.ndarray


def solve_lp(cost, G=None, h=None, E=None, f=None, context: str = "") -> LPSolution:
    """Solve the inequality/equality form above. Raises on failure."""
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if G is None:
        G = np.zeros((0, n))
        h = np.zeros(0)
    else:
        G = np.asarray(G, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
    if E is None:
        E = np.zeros((0, n))
        f = np.zeros(0)
    else:
        E = np.asarray(E, dtype=np.float64)
        f = np.asarray(f, dtype=np.float64)
    nG, nE = G.shape[0], E.shape[0]

    # equilibrate row scales with powers of two (exact in binary floating
    # point): mixed 1e-3 / 1e+2 rows otherwise corrupt the pivoting
    rows = np.vstack([G, E]) if nG + nE else np.zeros((0, n))
    rowmax = np.max(np.abs(rows), axis=1) if rows.size else np.zeros(nG + nE)
    d = np.where(rowmax > 0.0,
                 np.exp2(np.round(np.log2(np.maximum(rowmax, 1e-300)))), 1.0)
    rows = rows / d[:, None]

    # standard form over [x+, x-, s]: min c.x+ - c.x-
    #   G x+ - G x- + s = h,  E x+ - E x- = f,  all vars >= 0
    A = np.zeros((nG + nE, 2 * n + nG))
    A[:, :n] = rows
    A[:, n:2 * n] = -rows
    A[:nG, 2 * n:] = np.eye(nG)
    b = np.concatenate([h, f]) / d
    c = np.concatenate([cost, -cost, np.zeros(nG)])

    # snap coefficients that are rounding residue of upstream arithmetic;
    # the kernel must never pivot on them
    if A.size:
        A[np.abs(A) < 1e-13 * float(np.max(np.abs(A)))] = 0.0

    # normalize rhs and cost scale; the tableau kernel uses absolute
    # pivot tolerances, so wildly scaled inputs break it down
    beta = max(1.0, float(np.max(np.abs(b))) if b.size else 0.0)
    gamma = max(1.0, float(np.max(np.abs(c))) if c.size else 0.0)
    status, xs, _, y = kernels.simplex_solve(A, b / beta, c / gamma)
    xs = beta * xs
    y = gamma * y

    where = f" in {context}" if context else ""
    if status == kernels.INFEASIBLE:
        raise LPInfeasibleError(f"no feasible point{where}")
    if status == kernels.UNBOUNDED:
        raise LPUnboundedError(f"objective unbounded below{where} "
                               "(missing cuts or an unbounded control set)")
    if status == kernels.ITERATION_LIMIT:
        raise LPNumericalError(f"pivot budget exhausted{where}")

    x = xs[:n] - xs[n:2 * n]
    obj = float(cost @ x)
    scale = 1.0 + max(
        float(np.max(np.abs(h))) if nG else 0.0,
        float(np.max(np.abs(f))) if nE else 0.0,
        abs(obj),
    )
    if nG and float(np.max(G @ x - h)) > 1e-6 * scale:
        raise LPNumericalError(f"primal feasibility check failed{where}")
    if nE and float(np.max(np.abs(E @ x - f))) > 1e-6 * scale:
        raise LPNumericalError(f"primal equality check failed{where}")
    if abs(obj - float(y @ b)) > 1e-6 * scale:
        raise LPNumericalError(f"duality gap check failed{where}")

    y = y / d  # undo the row scaling on the multipliers
    ineq_duals = -y[:nG]
    eq_duals = -y[nG:] if nE else np.zeros(0)
    return LPSolution(x=x, obj=obj, ineq_duals=ineq_duals, eq_duals=eq_duals)

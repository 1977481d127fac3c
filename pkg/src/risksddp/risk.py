"""Parametric convex risk measures over finite discrete distributions.

Every measure here has the variational form

    R(Z) = inf over theta of E[ psi(Z, theta) ]

where psi is jointly convex, nondecreasing in z, and the infimum over
the parameter vector theta is attained (or computable to tolerance).
Four families are provided:

* ``Expectation``: psi(z) = z, no parameter.
* ``MeanAVaR``: a convex combination of the mean and average
  value-at-risk terms, psi(z, theta) = w0*z + sum_i wi*(theta_i +
  [z - theta_i]_+ / alpha_i).  The canonical minimizer of theta_i is
  the left (1 - alpha_i)-quantile.
* ``KLDivergence``: the worst-case expectation over distributions
  within a relative-entropy ball of radius eps, psi(z, (mu, lam)) =
  lam*eps - lam + mu + lam*exp((z - mu)/lam).  The minimization
  reduces to a one-dimensional convex program in lam.
* ``OCE``: a utility-shaped certainty-equivalent measure,
  psi(z, theta) = theta - u(theta - z) for a concave nondecreasing
  piecewise-linear utility u whose slopes straddle 1.  AV@R is the
  special case u(w) = min(w/alpha, 0).

Subgradients at kink points use the strict-inequality convention,
i.e. the left element of the subdifferential in z.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

_EXP_OVERFLOW = 700.0


def _guarded_exp(w: float) -> float:
    return math.inf if w > _EXP_OVERFLOW else math.exp(w)


def logmeanexp(values: np.ndarray, probs: np.ndarray) -> float:
    """log of the probability-weighted mean of exp(values), shift-stabilized."""
    shift = float(np.max(values))
    return shift + math.log(float(np.sum(probs * np.exp(values - shift))))


def golden_section_min(fn, lo: float, hi: float, f_tol: float = 1e-10,
                       budget: int = 200):
    """Minimize a scalar convex function on [lo, hi].

    Returns (x_best, f_best).  Stops when the bracket or the objective
    spread is below tolerance, or after `budget` shrink steps.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    best_x, best_f = (c, fc) if fc <= fd else (d, fd)
    for _ in range(budget):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
        if fc < best_f:
            best_x, best_f = c, fc
        if fd < best_f:
            best_x, best_f = d, fd
        if b - a <= 1e-12 * max(1.0, abs(a), abs(b)):
            break
        if abs(fc - fd) <= f_tol * (1.0 + min(abs(fc), abs(fd))) \
                and b - a <= 1e-6 * max(1.0, abs(b)):
            break
    return best_x, best_f


@dataclass
class DiscreteDistribution:
    """Finite support values with positive probabilities summing to one."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.values.shape != self.probs.shape or self.values.ndim != 1:
            raise ValueError("values and probs must be 1-d arrays of equal length")
        if self.values.size == 0:
            raise ValueError("distribution needs at least one atom")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite support value")
        if np.any(self.probs <= 0.0):
            raise ValueError("probabilities must be positive")
        if abs(float(np.sum(self.probs)) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")

    @classmethod
    def of(cls, values, probs=None) -> "DiscreteDistribution":
        values = np.asarray(values, dtype=np.float64)
        if probs is None:
            probs = np.full(values.shape, 1.0 / values.size)
        return cls(values, np.asarray(probs, dtype=np.float64))

    def mean(self) -> float:
        return float(self.probs @ self.values)


class RiskMeasure:
    """Common interface, see module docstring. Subclasses set `kind`."""

    kind: str = ""
    is_polyhedral: bool = True

    @property
    def theta_dim(self) -> int:
        raise NotImplementedError

    def value(self, z: float, theta: np.ndarray) -> float:
        raise NotImplementedError

    def grad_z(self, z: float, theta: np.ndarray) -> float:
        raise NotImplementedError

    def theta_grad(self, z: float, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def minimize_theta(self, dist: DiscreteDistribution) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, dist: DiscreteDistribution) -> float:
        theta = self.minimize_theta(dist)
        return float(sum(p * self.value(z, theta)
                         for z, p in zip(dist.values, dist.probs)))

    def as_config(self) -> dict:
        raise NotImplementedError

    def values_at(self, values: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.array([self.value(float(z), theta) for z in values])

    def grads_at(self, values: np.ndarray, theta: np.ndarray) -> np.ndarray:
        return np.array([self.grad_z(float(z), theta) for z in values])


class Expectation(RiskMeasure):
    """Risk-neutral: R(Z) = E[Z]."""

    kind = "expectation"

    @property
    def theta_dim(self) -> int:
        return 0

    def value(self, z, theta):
        return float(z)

    def grad_z(self, z, theta):
        return 1.0

    def theta_grad(self, z, theta):
        return np.zeros(0)

    def minimize_theta(self, dist):
        return np.zeros(0)

    def evaluate(self, dist):
        return dist.mean()

    def values_at(self, values, theta):
        return np.asarray(values, dtype=np.float64)

    def grads_at(self, values, theta):
        return np.ones(len(values))

    def as_config(self):
        return {"kind": "expectation"}

    def __repr__(self):
        return "Expectation()"


class MeanAVaR(RiskMeasure):
    """w0 * mean + sum_i wi * AV@R at level alpha_i.

    weights has one more entry than levels (the mean weight first);
    weights are nonnegative and sum to one, levels lie in (0, 1].
    A level of exactly 1 makes that term the plain expectation.
    """

    kind = "mean_avar"

    def __init__(self, weights, levels):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.levels = np.asarray(levels, dtype=np.float64)
        if self.weights.ndim != 1 or self.levels.ndim != 1:
            raise ValueError("weights and levels must be 1-d")
        if self.weights.size != self.levels.size + 1:
            raise ValueError("need one more weight than levels")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")
        if np.any(self.levels <= 0.0) or np.any(self.levels > 1.0):
            raise ValueError("levels must lie in (0, 1]")

    @property
    def theta_dim(self) -> int:
        return self.levels.size

    def value(self, z, theta):
        out = self.weights[0] * z
        for i in range(self.levels.size):
            out += self.weights[i + 1] * (
                theta[i] + max(z - theta[i], 0.0) / self.levels[i])
        return float(out)

    def grad_z(self, z, theta):
        out = self.weights[0]
        for i in range(self.levels.size):
            if z > theta[i]:
                out += self.weights[i + 1] / self.levels[i]
        return float(out)

    def theta_grad(self, z, theta):
        g = np.empty(self.levels.size)
        for i in range(self.levels.size):
            ind = 1.0 if z > theta[i] else 0.0
            g[i] = self.weights[i + 1] * (1.0 - ind / self.levels[i])
        return g

    def minimize_theta(self, dist):
        order = np.argsort(dist.values, kind="stable")
        sorted_vals = dist.values[order]
        cum = np.cumsum(dist.probs[order])
        theta = np.empty(self.levels.size)
        for i, alpha in enumerate(self.levels):
            q = 1.0 - alpha
            idx = int(np.searchsorted(cum, q - 1e-12, side="left"))
            theta[i] = sorted_vals[min(idx, sorted_vals.size - 1)]
        return theta

    def values_at(self, values, theta):
        values = np.asarray(values, dtype=np.float64)
        out = self.weights[0] * values
        for i in range(self.levels.size):
            out = out + self.weights[i + 1] * (
                theta[i] + np.maximum(values - theta[i], 0.0) / self.levels[i])
        return out

    def grads_at(self, values, theta):
        values = np.asarray(values, dtype=np.float64)
        out = np.full(values.shape, self.weights[0])
        for i in range(self.levels.size):
            out = out + (values > theta[i]) * (self.weights[i + 1] / self.levels[i])
        return out

    def evaluate(self, dist):
        theta = self.minimize_theta(dist)
        return float(dist.probs @ self.values_at(dist.values, theta))

    def as_config(self):
        return {"kind": "mean_avar", "weights": self.weights.tolist(),
                "levels": self.levels.tolist()}

    def __repr__(self):
        return f"MeanAVaR(weights={self.weights.tolist()}, levels={self.levels.tolist()})"


class KLDivergence(RiskMeasure):
    """Worst-case mean over a relative-entropy ball of radius eps.

    R(Z) = inf over lam > 0 of lam*eps + lam*log E[exp(Z/lam)], with
    mu recovered as lam*log E[exp(Z/lam)].  theta = (mu, lam).
    """

    kind = "kl"
    is_polyhedral = False

    def __init__(self, eps: float):
        if not (eps > 0.0 and math.isfinite(eps)):
            raise ValueError("eps must be positive and finite")
        self.eps = float(eps)

    @property
    def theta_dim(self) -> int:
        return 2

    def value(self, z, theta):
        mu, lam = float(theta[0]), float(theta[1])
        if lam <= 0.0:
            raise ValueError("lam must be positive")
        return self.eps * lam - lam + mu + lam * _guarded_exp((z - mu) / lam)

    def grad_z(self, z, theta):
        mu, lam = float(theta[0]), float(theta[1])
        if lam <= 0.0:
            raise ValueError("lam must be positive")
        return _guarded_exp((z - mu) / lam)

    def theta_grad(self, z, theta):
        mu, lam = float(theta[0]), float(theta[1])
        w = (z - mu) / lam
        e = _guarded_exp(w)
        return np.array([1.0 - e, self.eps - 1.0 + e * (1.0 - w)])

    def _lam_bracket(self, spread: float) -> tuple[float, float]:
        # the infimum may sit at lam -> 0 (radius large enough to cover a
        # point mass); the floor bounds that boundary error by ~1e-9*spread
        lo = 1e-9 * spread + 1e-12
        hi = max(1.0, spread * max(1e3, 1.0 / math.sqrt(self.eps)))
        return lo, hi

    def minimize_theta(self, dist):
        spread = float(np.max(dist.values) - np.min(dist.values))
        if spread == 0.0:
            # any lam > 0 is optimal up to eps*lam; pick one at the
            # distribution's own scale so downstream exp() stays tame
            z0 = float(dist.values[0])
            return np.array([z0, 1e-6 * (1.0 + abs(z0))])
        lo, hi = self._lam_bracket(spread)

        def objective(lam: float) -> float:
            return lam * (self.eps + logmeanexp(dist.values / lam, dist.probs))

        lam, best = golden_section_min(objective, lo, hi)
        # Newton polish on lam drives d/d lam to ~machine zero, which the
        # cut construction relies on (the residual multiplies a box width).
        for _ in range(8):
            w = (dist.values - np.max(dist.values)) / lam
            om = dist.probs * np.exp(w)
            om /= om.sum()
            zbar = float(om @ dist.values)
            var = float(om @ (dist.values - zbar) ** 2)
            grad = self.eps + logmeanexp(dist.values / lam, dist.probs) - zbar / lam
            if var <= 0.0:
                break
            step = grad * lam ** 3 / var
            cand = min(max(lam - step, 0.25 * lam), 4.0 * lam)
            fc = objective(cand)
            if fc <= best:
                lam, best = cand, fc
            if abs(step) <= 1e-14 * lam:
                break
        mu = lam * logmeanexp(dist.values / lam, dist.probs)
        return np.array([mu, lam])

    def evaluate(self, dist):
        theta = self.minimize_theta(dist)
        return float(dist.probs @ self.values_at(dist.values, theta))

    def values_at(self, values, theta):
        mu, lam = float(theta[0]), float(theta[1])
        w = (np.asarray(values, dtype=np.float64) - mu) / lam
        out = np.where(w > _EXP_OVERFLOW, np.inf, np.exp(np.minimum(w, _EXP_OVERFLOW)))
        return self.eps * lam - lam + mu + lam * out

    def grads_at(self, values, theta):
        mu, lam = float(theta[0]), float(theta[1])
        w = (np.asarray(values, dtype=np.float64) - mu) / lam
        return np.where(w > _EXP_OVERFLOW, np.inf, np.exp(np.minimum(w, _EXP_OVERFLOW)))

    def as_config(self):
        return {"kind": "kl", "epsilon": self.eps}

    def __repr__(self):
        return f"KLDivergence(eps={self.eps})"


class OCE(RiskMeasure):
    """Certainty-equivalent measure psi(z, theta) = theta - u(theta - z).

    The utility u is concave, nondecreasing and piecewise linear:
    `slopes` (one more than `breakpoints`) are nonincreasing and
    nonnegative, and must straddle 1 (first >= 1 >= last) so the
    parameter minimization is bounded.  u is anchored to 0 at the
    first breakpoint and extended linearly beyond the end breakpoints.
    """

    kind = "oce"

    def __init__(self, breakpoints, slopes):
        self.breakpoints = np.asarray(breakpoints, dtype=np.float64)
        self.slopes = np.asarray(slopes, dtype=np.float64)
        if self.breakpoints.ndim != 1 or self.breakpoints.size < 1:
            raise ValueError("need at least one breakpoint")
        if self.slopes.shape != (self.breakpoints.size + 1,):
            raise ValueError("need exactly one more slope than breakpoints")
        if np.any(np.diff(self.breakpoints) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(self.slopes < 0.0):
            raise ValueError("slopes must be nonnegative")
        if np.any(np.diff(self.slopes) > 1e-12):
            raise ValueError("slopes must be nonincreasing (concave utility)")
        if self.slopes[0] < 1.0 or self.slopes[-1] > 1.0:
            raise ValueError("slopes must straddle 1 (first >= 1 >= last) "
                             "for a bounded parameter minimization")
        # utility values at the knots, anchored to 0 at the first
        vals = np.zeros(self.breakpoints.size)
        for b in range(1, self.breakpoints.size):
            step = self.breakpoints[b] - self.breakpoints[b - 1]
            vals[b] = vals[b - 1] + self.slopes[b] * step
        self._knot_values = vals

    @property
    def theta_dim(self) -> int:
        return 1

    def utility(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, w, side="right")
        anchor = np.clip(idx - 1, 0, self.breakpoints.size - 1)
        return (self._knot_values[anchor]
                + self.slopes[idx] * (w - self.breakpoints[anchor]))

    def utility_right_slope(self, w) -> np.ndarray:
        idx = np.searchsorted(self.breakpoints, np.asarray(w, dtype=np.float64),
                              side="right")
        return self.slopes[idx]

    def value(self, z, theta):
        t = float(theta[0])
        return t - float(self.utility(t - z))

    def grad_z(self, z, theta):
        t = float(theta[0])
        return float(self.utility_right_slope(t - z))

    def theta_grad(self, z, theta):
        t = float(theta[0])
        return np.array([1.0 - float(self.utility_right_slope(t - z))])

    def minimize_theta(self, dist):
        cands = np.sort((dist.values[:, None] + self.breakpoints[None, :]).ravel())
        # objective at candidate t: t - E[u(t - Z)]
        w = cands[:, None] - dist.values[None, :]
        obj = cands - self.utility(w) @ dist.probs
        return np.array([cands[int(np.argmin(obj))]])

    def values_at(self, values, theta):
        t = float(theta[0])
        return t - self.utility(t - np.asarray(values, dtype=np.float64))

    def grads_at(self, values, theta):
        t = float(theta[0])
        return self.utility_right_slope(t - np.asarray(values, dtype=np.float64))

    def evaluate(self, dist):
        theta = self.minimize_theta(dist)
        return float(dist.probs @ self.values_at(dist.values, theta))

    def convex_pieces(self) -> tuple[np.ndarray, np.ndarray]:
        """Affine pieces (slopes, intercepts) of v(w) = -u(-w).

        v is convex nondecreasing and psi(z, theta) = theta + v(z - theta),
        so v(w) = max_b (slope_b * w + intercept_b) is what the stage LPs
        use for the epigraph rows.
        """
        knots = -self.breakpoints[::-1]
        knot_vals = -self._knot_values[::-1]
        slopes = self.slopes[::-1]
        intercepts = np.empty(slopes.size)
        # piece b covers [knots[b-1], knots[b]]; anchor each line at a knot
        for b in range(slopes.size):
            anchor = knots[min(b, knots.size - 1)]
            val = knot_vals[min(b, knots.size - 1)]
            intercepts[b] = val - slopes[b] * anchor
        return slopes.copy(), intercepts

    def as_config(self):
        return {"kind": "oce", "breakpoints": self.breakpoints.tolist(),
                "slopes": self.slopes.tolist()}

    def __repr__(self):
        return (f"OCE(breakpoints={self.breakpoints.tolist()}, "
                f"slopes={self.slopes.tolist()})")


def risk_measure_from_config(cfg: dict) -> RiskMeasure:
    kind = cfg.get("kind")
    if kind == "expectation":
        return Expectation()
    if kind == "mean_avar":
        return MeanAVaR(cfg["weights"], cfg["levels"])
    if kind == "kl":
        return KLDivergence(cfg["epsilon"])
    if kind == "oce":
        return OCE(cfg["breakpoints"], cfg["slopes"])
    raise ValueError(f"unknown risk measure kind {kind!r}")


def parse_risk_spec(spec: str) -> RiskMeasure:
    """Parse a command-line risk spec.

    Forms: ``expectation``, ``mean-avar:W0,W1,..;A1,..``, ``kl:EPS``,
    ``oce:FILE`` where FILE is a JSON file with breakpoints and slopes.
    """
    spec = spec.strip()
    if spec == "expectation":
        return Expectation()
    if spec.startswith("mean-avar:"):
        body = spec[len("mean-avar:"):]
        try:
            weights_part, levels_part = body.split(";")
            weights = [float(v) for v in weights_part.split(",") if v]
            levels = [float(v) for v in levels_part.split(",") if v]
        except ValueError as exc:
            raise ValueError(f"cannot parse mean-avar spec {spec!r}") from exc
        return MeanAVaR(weights, levels)
    if spec.startswith("kl:"):
        return KLDivergence(float(spec[len("kl:"):]))
    if spec.startswith("oce:"):
        path = spec[len("oce:"):]
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
        return OCE(cfg["breakpoints"], cfg["slopes"])
    raise ValueError(f"unknown risk spec {spec!r}")

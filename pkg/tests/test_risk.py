"""Risk-measure calculus: worked examples, oracles, and coherence laws."""

from __future__ import annotations

import numpy as np
import pytest

from risksddp.risk import (OCE, DiscreteDistribution, Expectation,
                           KLDivergence, MeanAVaR, parse_risk_spec,
                           risk_measure_from_config)

scipy_opt = pytest.importorskip("scipy.optimize")


def random_dist(rng, max_atoms=9, scale=5.0):
    n = int(rng.integers(2, max_atoms))
    values = rng.normal(scale=scale, size=n)
    probs = rng.dirichlet(np.ones(n))
    return DiscreteDistribution.of(values, probs)


def objective(risk, dist, theta) -> float:
    return float(dist.probs @ risk.values_at(dist.values, theta))


# independent minimizers over theta, one per kind


def oracle_min(risk, dist) -> float:
    if risk.kind == "expectation":
        return dist.mean()
    if risk.kind == "mean_avar":
        # each AV@R term's optimal quantile sits at an atom
        total = risk.weights[0] * dist.mean()
        for w, alpha in zip(risk.weights[1:], risk.levels):
            objs = [t + float(dist.probs @ np.maximum(dist.values - t, 0.0)) / alpha
                    for t in dist.values]
            total += w * min(objs)
        return total
    if risk.kind == "kl":
        spread = float(np.max(dist.values) - np.min(dist.values))
        zmax = float(np.max(dist.values))

        def f(loglam):
            lam = np.exp(loglam)
            return lam * risk.eps + lam * np.log(
                float(dist.probs @ np.exp((dist.values - zmax) / lam))) + zmax

        res = scipy_opt.minimize_scalar(
            f, bounds=(np.log(1e-7 * (spread + 1e-9)), np.log(1e4 * (spread + 1.0))),
            method="bounded", options={"xatol": 1e-14})
        return float(res.fun)
    if risk.kind == "oce":
        lo = float(np.min(dist.values) + risk.breakpoints[0]) - 1.0
        hi = float(np.max(dist.values) + risk.breakpoints[-1]) + 1.0

        def f(t):
            return t - float(dist.probs @ risk.utility(t - dist.values))

        res = scipy_opt.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                        options={"xatol": 1e-13})
        # bounded Brent can sit on a flat piece; also scan the knots
        cands = (dist.values[:, None] + risk.breakpoints[None, :]).ravel()
        return min(float(res.fun), min(f(t) for t in cands))
    raise AssertionError(risk.kind)


class TestWorkedExamples:
    def test_expectation(self):
        d = DiscreteDistribution.of([1.0, 2.0, 3.0], [0.2, 0.3, 0.5])
        assert Expectation().evaluate(d) == pytest.approx(2.3, abs=1e-14)

    def test_pure_avar_tail_mean(self):
        risk = MeanAVaR([0.0, 1.0], [0.5])
        d = DiscreteDistribution.of([0.0, 4.0])
        assert risk.evaluate(d) == pytest.approx(4.0, abs=1e-12)
        assert risk.value(4.0, np.array([2.0])) == pytest.approx(6.0)
        assert risk.grad_z(4.0, np.array([2.0])) == pytest.approx(2.0)

    def test_mean_avar_mixture(self):
        risk = MeanAVaR([0.5, 0.5], [0.25])
        d = DiscreteDistribution.of([1.0, 2.0, 3.0, 4.0])
        # mean 2.5, quarter-tail mean 4.0
        assert risk.evaluate(d) == pytest.approx(3.25, abs=1e-12)

    def test_kl_limits(self):
        d = DiscreteDistribution.of([1.0, 2.0, 3.0], [0.2, 0.3, 0.5])
        assert KLDivergence(1e-12).evaluate(d) == pytest.approx(2.3, abs=1e-5)
        # radius > ln(1/p_max): the ball contains the point mass at the max
        assert KLDivergence(1.0).evaluate(d) == pytest.approx(3.0, abs=1e-4)

    def test_kl_worst_case_reweighting(self):
        # R should equal max E_q[Z] over exponentially tilted q at KL radius
        rng = np.random.default_rng(4)
        risk = KLDivergence(0.05)
        for _ in range(40):
            d = random_dist(rng)
            if np.ptp(d.values) < 1e-6:
                continue
            value = risk.evaluate(d)

            def tilted(lam):
                w = d.probs * np.exp((d.values - d.values.max()) / lam)
                q = w / w.sum()
                pos = q > 0.0
                kl = float(q[pos] @ np.log(q[pos] / d.probs[pos]))
                return q, kl

            lo, hi = 1e-6 * np.ptp(d.values), 1e6
            for _ in range(200):  # bisect KL(q_lam || p) = eps
                mid = np.sqrt(lo * hi)
                _, kl = tilted(mid)
                lo, hi = (mid, hi) if kl > risk.eps else (lo, mid)
            q, kl = tilted(hi)
            assert kl == pytest.approx(risk.eps, rel=1e-3)
            assert float(q @ d.values) == pytest.approx(value, rel=1e-5)

    def test_oce_flat_interval_and_certainty(self):
        risk = OCE([0.0], [1.4, 0.6])
        d = DiscreteDistribution.of([-1.0, 1.0])
        assert risk.evaluate(d) == pytest.approx(0.4, abs=1e-12)
        const = DiscreteDistribution.of([7.0, 7.0 + 1e-15], [0.5, 0.5])
        assert risk.evaluate(const) == pytest.approx(7.0, abs=1e-9)


KINDS = [
    Expectation(),
    MeanAVaR([0.4, 0.35, 0.25], [0.3, 0.8]),
    MeanAVaR([0.0, 1.0], [0.1]),
    KLDivergence(0.02),
    KLDivergence(0.4),
    OCE([0.0], [1.4, 0.6]),
    OCE([-0.5, 0.7], [1.8, 1.1, 0.3]),
]


@pytest.mark.parametrize("risk", KINDS, ids=repr)
def test_minimizer_matches_oracle(risk):
    rng = np.random.default_rng(11)
    for _ in range(200):
        d = random_dist(rng)
        theta = risk.minimize_theta(d)
        got = objective(risk, d, theta)
        want = oracle_min(risk, d)
        tol = 1e-6 * (1.0 + abs(want))
        assert got <= want + tol
        assert got >= want - tol


@pytest.mark.parametrize("risk", KINDS, ids=repr)
def test_gradients_match_finite_differences(risk):
    rng = np.random.default_rng(23)
    h = 1e-6
    checked = 0
    while checked < 200:
        z = float(rng.normal(scale=4.0))
        theta = rng.normal(scale=3.0, size=max(risk.theta_dim, 1))
        if risk.kind == "kl":
            theta[1] = abs(theta[1]) + 0.5
        # skip points too close to a kink for the centered difference
        probes = [risk.value(z + s, theta) for s in (-3 * h, 0.0, 3 * h)]
        second = abs(probes[0] - 2 * probes[1] + probes[2])
        if second > 1e-10 * (1.0 + abs(probes[1])) and risk.kind != "kl":
            continue
        fd_z = (risk.value(z + h, theta) - risk.value(z - h, theta)) / (2 * h)
        gz = risk.grad_z(z, theta)
        assert gz == pytest.approx(fd_z, rel=2e-5, abs=2e-5)
        if risk.theta_dim:
            gt = risk.theta_grad(z, theta)
            for i in range(risk.theta_dim):
                tp, tm = theta.copy(), theta.copy()
                tp[i] += h
                tm[i] -= h
                fd = (risk.value(z, tp) - risk.value(z, tm)) / (2 * h)
                probe = abs(risk.value(z, tp) - 2 * risk.value(z, theta)
                            + risk.value(z, tm))
                if probe > 1e-10 * (1.0 + abs(risk.value(z, theta))):
                    continue  # kink in theta direction
                assert gt[i] == pytest.approx(fd, rel=2e-5, abs=2e-5)
        checked += 1


@pytest.mark.parametrize("risk", KINDS, ids=repr)
def test_translation_equivariance(risk):
    rng = np.random.default_rng(7)
    for _ in range(60):
        d = random_dist(rng)
        c = float(rng.normal(scale=3.0))
        shifted = DiscreteDistribution.of(d.values + c, d.probs)
        assert risk.evaluate(shifted) == pytest.approx(
            risk.evaluate(d) + c, abs=1e-7 * (1 + abs(risk.evaluate(d)) + abs(c)))


@pytest.mark.parametrize("risk", [Expectation(),
                                  MeanAVaR([0.4, 0.35, 0.25], [0.3, 0.8]),
                                  KLDivergence(0.05)], ids=repr)
def test_positive_homogeneity(risk):
    rng = np.random.default_rng(19)
    for _ in range(60):
        d = random_dist(rng)
        t = float(rng.uniform(0.2, 4.0))
        scaled = DiscreteDistribution.of(t * d.values, d.probs)
        base = risk.evaluate(d)
        assert risk.evaluate(scaled) == pytest.approx(
            t * base, abs=1e-8 * (1.0 + abs(t * base)))


@pytest.mark.parametrize("risk", KINDS, ids=repr)
def test_dominates_expectation_or_matches(risk):
    if risk.kind == "oce":
        pytest.skip("only normalized-at-zero utilities dominate the mean")
    rng = np.random.default_rng(3)
    for _ in range(40):
        d = random_dist(rng)
        assert risk.evaluate(d) >= d.mean() - 1e-8 * (1.0 + abs(d.mean()))


def test_avar_level_one_is_expectation():
    rng = np.random.default_rng(41)
    risk = MeanAVaR([0.0, 1.0], [1.0])
    for _ in range(300):
        d = random_dist(rng)
        assert abs(risk.evaluate(d) - d.mean()) <= 1e-12 * (1.0 + abs(d.mean()))


class TestParsingAndConfig:
    def test_round_trips(self):
        for risk in KINDS:
            clone = risk_measure_from_config(risk.as_config())
            assert repr(clone) == repr(risk)

    def test_specs(self):
        assert parse_risk_spec("expectation").kind == "expectation"
        r = parse_risk_spec("mean-avar:0.5,0.5;0.05")
        assert r.weights.tolist() == [0.5, 0.5]
        assert r.levels.tolist() == [0.05]
        assert parse_risk_spec("kl:0.01").eps == 0.01

    def test_rejections(self):
        with pytest.raises(ValueError):
            MeanAVaR([0.5, 0.6], [0.1])  # weights exceed 1
        with pytest.raises(ValueError):
            MeanAVaR([0.5, 0.5], [1.5])  # level above 1
        with pytest.raises(ValueError):
            KLDivergence(0.0)
        with pytest.raises(ValueError):
            OCE([0.0], [0.6, 1.4])  # increasing slopes: convex, not concave
        with pytest.raises(ValueError):
            OCE([0.0], [0.9, 0.5])  # never steeper than 1: unbounded shift
        with pytest.raises(ValueError):
            DiscreteDistribution.of([1.0, 2.0], [0.7, 0.7])

    def test_uniform_default(self):
        d = DiscreteDistribution.of([5.0, 9.0])
        assert d.probs.tolist() == [0.5, 0.5]
        assert d.mean() == 7.0

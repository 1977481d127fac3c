"""Cut pool mechanics: pointwise max semantics and serialization."""

from __future__ import annotations

import numpy as np
import pytest

from risksddp.cuts import Cut, CutPool


def test_single_cut_value_and_subgrad():
    pool = CutPool(2)
    pool.add(1.0, np.array([2.0, -1.0]))
    x = np.array([3.0, 4.0])
    assert pool.value(x) == pytest.approx(1.0 + 6.0 - 4.0)
    v, g = pool.value_and_subgrad(x)
    assert v == pytest.approx(3.0)
    assert g == pytest.approx([2.0, -1.0])


def test_pool_is_pointwise_max():
    rng = np.random.default_rng(2)
    pool = CutPool(3)
    cuts = []
    for _ in range(25):
        a = float(rng.normal())
        g = rng.normal(size=3)
        pool.add(a, g)
        cuts.append(Cut(intercept=a, gradient=g))
    for _ in range(50):
        x = rng.normal(size=3)
        want = max(c.value(x) for c in cuts)
        assert pool.value(x) == pytest.approx(want)
        v, k = pool.argmax(x)
        assert v == pytest.approx(want)
        assert cuts[k].value(x) == pytest.approx(want)


def test_upto_prefix_view():
    pool = CutPool(1)
    pool.add(0.0, np.array([1.0]))
    pool.add(10.0, np.array([-1.0]))
    x = np.array([2.0])
    assert pool.value(x, upto=1) == pytest.approx(2.0)
    assert pool.value(x, upto=2) == pytest.approx(8.0)
    assert len(pool) == 2
    assert pool.a_view(1).shape == (1, 1)


def test_values_batch_matches_scalar():
    rng = np.random.default_rng(5)
    pool = CutPool(2)
    for _ in range(10):
        pool.add(float(rng.normal()), rng.normal(size=2))
    X = rng.normal(size=(20, 2))
    batch = pool.values(X)
    for i in range(20):
        assert batch[i] == pytest.approx(pool.value(X[i]))


def test_growth_preserves_contents():
    pool = CutPool(4)
    rng = np.random.default_rng(9)
    history = []
    for _ in range(200):  # force several reallocations
        a, g = float(rng.normal()), rng.normal(size=4)
        pool.add(a, g)
        history.append((a, g))
    x = rng.normal(size=4)
    want = max(a + g @ x for a, g in history)
    assert pool.value(x) == pytest.approx(want)


def test_from_affine_and_constant():
    cx = np.array([[1.0, 0.0], [0.0, 0.0]])
    c0 = np.array([0.0, 5.0])
    pool = CutPool.from_affine(cx, c0)
    assert pool.value(np.array([2.0, 7.0])) == pytest.approx(5.0)
    assert pool.value(np.array([9.0, 0.0])) == pytest.approx(9.0)
    pool.add_constant(20.0)
    assert pool.value(np.zeros(2)) == pytest.approx(20.0)


def test_config_round_trip():
    rng = np.random.default_rng(13)
    pool = CutPool(3)
    for _ in range(7):
        pool.add(float(rng.normal()), rng.normal(size=3))
    clone = CutPool.from_config(pool.to_config())
    assert len(clone) == len(pool)
    for _ in range(20):
        x = rng.normal(size=3)
        assert clone.value(x) == pool.value(x)  # bitwise, not approx

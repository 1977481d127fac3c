"""Outer polyhedral approximations built from affine minorants.

A pool keeps cuts (h, a) with value(x) = max_i h_i + a_i . x.  Cuts are
append-only, so a prefix count pins down the approximation any earlier
iteration saw; readers pass that count as `upto` to replay it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Cut:
    intercept: float
    gradient: np.ndarray

    def value(self, x: np.ndarray) -> float:
        return self.intercept + float(self.gradient @ x)


class CutPool:
    """Append-only pool of affine minorants of a convex function."""

    def __init__(self, dim: int):
        self.dim = dim
        self._cap = 64
        self._a = np.zeros((self._cap, dim))
        self._h = np.zeros(self._cap)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def _grow(self, need: int) -> None:
        while self._cap < need:
            self._cap *= 2
        a = np.zeros((self._cap, self.dim))
        h = np.zeros(self._cap)
        a[: self._n] = self._a[: self._n]
        h[: self._n] = self._h[: self._n]
        self._a, self._h = a, h

    def add(self, intercept: float, gradient: np.ndarray) -> None:
        gradient = np.asarray(gradient, dtype=np.float64)
        if gradient.shape != (self.dim,):
            raise ValueError(f"cut gradient must have shape ({self.dim},)")
        if self._n == self._cap:
            self._grow(self._n + 1)
        self._a[self._n] = gradient
        self._h[self._n] = intercept
        self._n += 1

    def add_constant(self, value: float) -> None:
        self.add(value, np.zeros(self.dim))

    # reads ------------------------------------------------------------

    def _count(self, upto: int | None) -> int:
        n = self._n if upto is None else min(upto, self._n)
        if n <= 0:
            raise ValueError("cut pool is empty; add a bounding cut first")
        return n

    def a_view(self, upto: int | None = None) -> np.ndarray:
        return self._a[: self._count(upto)]

    def h_view(self, upto: int | None = None) -> np.ndarray:
        return self._h[: self._count(upto)]

    def value(self, x: np.ndarray, upto: int | None = None) -> float:
        n = self._count(upto)
        return float(np.max(self._a[:n] @ x + self._h[:n]))

    def value_and_subgrad(self, x: np.ndarray, upto: int | None = None):
        n = self._count(upto)
        vals = self._a[:n] @ x + self._h[:n]
        i = int(np.argmax(vals))
        return float(vals[i]), self._a[i]

    def argmax(self, x: np.ndarray, upto: int | None = None):
        """(value, index) of the supporting cut at x; lowest index on ties."""
        n = self._count(upto)
        vals = self._a[:n] @ x + self._h[:n]
        i = int(np.argmax(vals))
        return float(vals[i]), i

    def values(self, X: np.ndarray, upto: int | None = None) -> np.ndarray:
        """Pool values at each row of X."""
        n = self._count(upto)
        return np.max(X @ self._a[:n].T + self._h[:n], axis=1)

    # serialization ------------------------------------------------------

    def to_config(self) -> dict:
        return {
            "dim": self.dim,
            "intercepts": self._h[: self._n].tolist(),
            "gradients": self._a[: self._n].tolist(),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "CutPool":
        pool = cls(int(cfg["dim"]))
        grads = np.asarray(cfg["gradients"], dtype=np.float64).reshape(-1, pool.dim)
        hs = np.asarray(cfg["intercepts"], dtype=np.float64)
        for h, a in zip(hs, grads):
            pool.add(float(h), a)
        return pool

    @classmethod
    def from_affine(cls, cx: np.ndarray, c0: np.ndarray) -> "CutPool":
        """Pool holding the pieces of a given PWL convex function."""
        pool = cls(cx.shape[1])
        for row, h in zip(cx, c0):
            pool.add(float(h), row)
        return pool

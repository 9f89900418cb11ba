"""Seeded synthetic objectives with unbiased minibatch gradient oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import PURPOSE_STREAM, stream


class Problem:
    kind = "base"
    dim: int

    def init_params(self) -> np.ndarray:
        return np.zeros(self.dim)

    def loss(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, w: np.ndarray, rng: np.random.Generator, step: int = 0) -> np.ndarray:
        raise NotImplementedError


class _Dataset(Problem):
    """Finite-sum objective; minibatches are drawn with replacement."""

    def __init__(self, A, y, batch: int):
        if batch < 1:
            raise ValueError("batch must be >= 1")
        self.A = A
        self.y = y
        self.batch = int(batch)
        self.n, self.dim = A.shape

    def _sample(self, rng):
        return rng.integers(0, self.n, size=self.batch)

    def gradient(self, w, rng, step=0):
        idx = self._sample(rng)
        return self._grad(w, self.A[idx], self.y[idx])

    def full_gradient(self, w):
        return self._grad(w, self.A, self.y)


class LeastSquares(_Dataset):
    """``f(w) = ||A w - y||^2 / (2n)``."""

    kind = "least-squares"

    def __init__(self, n: int = 1000, dim: int = 50, noise: float = 0.5, batch: int = 16, seed: int = 0):
        rng = stream(seed, PURPOSE_STREAM, 0)
        A = rng.standard_normal((n, dim))
        w_true = rng.standard_normal(dim)
        y = A @ w_true + noise * rng.standard_normal(n)
        super().__init__(A, y, batch)

    def loss(self, w):
        r = self.A @ w - self.y
        return float(0.5 * np.dot(r, r) / self.n)

    def _grad(self, w, A, y):
        return A.T @ (A @ w - y) / len(y)

    def solution(self) -> np.ndarray:
        return np.linalg.lstsq(self.A, self.y, rcond=None)[0]


class Logistic(_Dataset):
    """L2-regularized logistic regression on labels in {-1, +1}."""

    kind = "logistic"

    def __init__(self, n: int = 1000, dim: int = 50, noise: float = 0.5, batch: int = 16,
                 seed: int = 0, l2: float = 1e-3):
        rng = stream(seed, PURPOSE_STREAM, 0)
        A = rng.standard_normal((n, dim))
        w_true = rng.standard_normal(dim)
        logits = A @ w_true + noise * rng.standard_normal(n)
        y = np.where(logits >= 0, 1.0, -1.0)
        self.l2 = l2
        super().__init__(A, y, batch)

    def loss(self, w):
        z = self.y * (self.A @ w)
        return float(np.mean(np.logaddexp(0.0, -z)) + 0.5 * self.l2 * np.dot(w, w))

    def _grad(self, w, A, y):
        z = y * (A @ w)
        coef = -y * np.exp(-np.logaddexp(0.0, z))  # -y * sigmoid(-z)
        return A.T @ coef / len(y) + self.l2 * w


class SmallMLP(_Dataset):
    """One tanh hidden layer regressing a random teacher network."""

    kind = "mlp"

    def __init__(self, n: int = 1000, dim: int = 20, hidden: int = 16, noise: float = 0.1,
                 batch: int = 16, seed: int = 0):
        rng = stream(seed, PURPOSE_STREAM, 0)
        X = rng.standard_normal((n, dim))
        W1 = rng.standard_normal((dim, hidden)) / np.sqrt(dim)
        w2 = rng.standard_normal(hidden) / np.sqrt(hidden)
        y = np.tanh(X @ W1) @ w2 + noise * rng.standard_normal(n)
        self.in_dim = dim
        self.hidden = hidden
        self._init_rng_seed = seed
        super().__init__(X, y, batch)
        self.dim = dim * hidden + hidden + hidden + 1

    def _unpack(self, w):
        d, h = self.in_dim, self.hidden
        W1 = w[: d * h].reshape(d, h)
        b1 = w[d * h : d * h + h]
        w2 = w[d * h + h : d * h + 2 * h]
        b2 = w[-1]
        return W1, b1, w2, b2

    def init_params(self):
        rng = stream(self._init_rng_seed, PURPOSE_STREAM, 1)
        w = np.zeros(self.dim)
        d, h = self.in_dim, self.hidden
        w[: d * h] = rng.standard_normal(d * h) / np.sqrt(d)
        w[d * h + h : d * h + 2 * h] = rng.standard_normal(h) / np.sqrt(h)
        return w

    def loss(self, w):
        W1, b1, w2, b2 = self._unpack(w)
        r = np.tanh(self.A @ W1 + b1) @ w2 + b2 - self.y
        return float(0.5 * np.mean(r * r))

    def _grad(self, w, X, y):
        W1, b1, w2, b2 = self._unpack(w)
        H = np.tanh(X @ W1 + b1)
        r = (H @ w2 + b2 - y) / len(y)
        dH = np.outer(r, w2) * (1.0 - H * H)
        return np.concatenate([(X.T @ dH).ravel(), dH.sum(axis=0), H.T @ r, [r.sum()]])


@dataclass
class DriftPhase:
    start: int
    scale: float


class DriftingStream(Problem):
    """Gradient noise whose coordinate-scale profile changes over time.

    Coordinates are split into a "fast" group whose standard deviation is
    multiplied by ``factor`` at each step in ``drops`` and a "slow" group
    that keeps its scale, so the shape of the normalized coordinates shifts
    at every drop (a pure rescaling would leave it unchanged).  The oracle
    is ``l2 * w + noise``, unbiased for ``f(w) = l2 ||w||^2 / 2``.
    """

    kind = "drift"

    def __init__(self, dim: int = 2048, fast_fraction: float = 0.25, drops=(300, 600),
                 factor: float = 0.2, base_scale: float = 1.0, slow_scale: float = 0.05,
                 l2: float = 0.0, seed: int = 0):
        if not 0 < fast_fraction <= 1:
            raise ValueError("fast_fraction must lie in (0, 1]")
        self.dim = int(dim)
        rng = stream(seed, PURPOSE_STREAM, 0)
        self.fast = rng.random(self.dim) < fast_fraction
        self.drops = tuple(sorted(int(t) for t in drops))
        self.factor = float(factor)
        self.base_scale = float(base_scale)
        self.slow_scale = float(slow_scale)
        self.l2 = float(l2)

    def scales(self, step: int) -> np.ndarray:
        k = sum(1 for t in self.drops if step >= t)
        fast = self.base_scale * self.factor ** k
        return np.where(self.fast, fast, self.slow_scale)

    def loss(self, w):
        return float(0.5 * self.l2 * np.dot(w, w))

    def full_gradient(self, w):
        return self.l2 * w

    def gradient(self, w, rng, step=0):
        return self.l2 * w + self.scales(step) * rng.standard_normal(self.dim)


def make_problem(kind: str, seed: int = 0, **kw) -> Problem:
    table = {
        "least-squares": LeastSquares,
        "logistic": Logistic,
        "mlp": SmallMLP,
        "drift": DriftingStream,
    }
    table["logistic-regression"] = Logistic
    table["small-mlp"] = SmallMLP
    if kind not in table:
        raise ValueError(f"unknown problem {kind!r}; expected one of {sorted(table)}")
    return table[kind](seed=seed, **kw)

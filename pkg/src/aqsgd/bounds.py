"""Analytic variance and code-length bounds, schedule averages, and the
one-level variance gap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .codec import coarse_code_length_bound, expected_code_length_bound
from .distributions import TruncatedNormal
from .levels import LevelSet, NormKind


@dataclass(frozen=True)
class BoundReport:
    epsilon_q: float
    code_length_bits: float
    j_star: int
    k_p: float
    p: float
    ratio_term: float
    small_term: float
    d: int
    q: str
    level_hash: str
    applicable: bool = True

    def as_row(self) -> dict:
        return {
            "epsilon_q": self.epsilon_q,
            "code_length_bits": self.code_length_bits,
            "j_star": self.j_star,
            "k_p": self.k_p,
            "p": self.p,
            "ratio_term": self.ratio_term,
            "small_term": self.small_term,
            "d": self.d,
            "q": self.q,
            "level_hash": self.level_hash,
            "applicable": self.applicable,
        }


def k_p(p):
    """Constant with ``r (l_1 - r) <= K_p l_1^(2-p) r^p`` on ``[0, l_1]``."""
    p = np.asarray(p, dtype=float)
    return (1.0 / (2.0 - p)) * ((1.0 - p) / (2.0 - p)) ** (1.0 - p)


def _exponent_base(q: NormKind) -> float:
    # max-norm normalization is bounded through the L2 chain
    return 2.0 if q.is_inf else min(q.q, 2.0)


def ratio_term(levels: LevelSet) -> tuple[float, int]:
    """Worst consecutive-ratio contribution and its index ``j*`` (1-based)."""
    pos = levels.positive[1:]  # l_1, ..., l_s, 1
    ratios = pos[1:] / pos[:-1]
    j = int(np.argmax(ratios))
    rho = float(ratios[j])
    return (rho - 1.0) ** 2 / (4.0 * rho), j + 1


def _small_term(l1: float, d: int, m: float) -> tuple[float, float, float]:
    """``inf_{0<p<1} K_p l_1^(2-p) d^((2-p)/m)``; returns (value, p, K_p)."""
    log_l1 = math.log(l1)
    log_d = math.log(d)

    def f(p):
        return float(np.log(k_p(p)) + (2.0 - p) * (log_l1 + log_d / m))

    res = optimize.minimize_scalar(f, bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-10})
    best_p, best = float(res.x), float(res.fun)
    # safeguard against a non-unimodal profile: coarse scan
    grid = np.linspace(1e-4, 1 - 1e-4, 9999)
    vals = np.log(k_p(grid)) + (2.0 - grid) * (log_l1 + log_d / m)
    k = int(np.argmin(vals))
    if vals[k] < best:
        best_p, best = float(grid[k]), float(vals[k])
    # the infimum over the open interval may sit at an end
    ends = {0.0: math.log(0.25) + 2.0 * (log_l1 + log_d / m), 1.0: log_l1 + log_d / m}
    for p_end, v in ends.items():
        if v < best:
            best_p, best = p_end, v
    return math.exp(best), best_p, float(k_p(best_p))


def variance_bound(levels: LevelSet, d: int, q=2.0, model=None) -> BoundReport:
    """Excess-variance factor ``epsilon_Q`` with ``Var <= epsilon_Q ||v||_2^2``
    for a bucket of ``d`` coordinates, plus the matching code-length bound
    (model-based when ``model`` is given, model-free otherwise).

    The ternary grid (no interior level) has no consecutive ratio; the
    report is marked not applicable and carries NaN.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    q = NormKind.parse(q)
    h = f"{levels.digest():016x}"
    if model is not None:
        bits = expected_code_length_bound(levels, model, d, q)
    else:
        bits = coarse_code_length_bound(levels, d, q)
    if levels.s == 0:
        nan = float("nan")
        return BoundReport(nan, bits, 0, nan, nan, nan, nan, d, str(q), h, applicable=False)
    m = _exponent_base(q)
    l1 = levels.interior[0]
    ratio, j_star = ratio_term(levels)
    if levels.symmetric:
        small = l1 * l1 * d ** (2.0 / m)
        p, kp = float("nan"), float("nan")
    else:
        small, p, kp = _small_term(l1, d, m)
    return BoundReport(ratio + small, bits, j_star, kp, p, ratio, small, d, str(q), h)


@dataclass
class ScheduleLedger:
    """Per-segment bounds: one entry per level set, weighted by its steps."""

    entries: list = field(default_factory=list)

    def add(self, level_hash: str, steps: int, epsilon_q: float, code_bits: float):
        if steps < 0:
            raise ValueError("steps must be nonnegative")
        self.entries.append((level_hash, int(steps), float(epsilon_q), float(code_bits)))

    @property
    def total_steps(self) -> int:
        return sum(e[1] for e in self.entries)


def schedule_average(ledger: ScheduleLedger) -> tuple[float, float]:
    """Step-weighted averages of the variance and code-length bounds.

    Entries whose bound is not applicable (NaN) make the average NaN.
    """
    if not ledger.entries:
        raise ValueError("empty ledger")
    T = ledger.total_steps
    if T == 0:
        raise ValueError("ledger covers zero steps")
    eps = sum(t * e for _, t, e, _ in ledger.entries if t) / T
    bits = sum(t * b for _, t, _, b in ledger.entries if t) / T
    return eps, bits


@dataclass(frozen=True)
class SingleLevelGap:
    b_star: float
    b_hat: float
    gamma: float
    gap_lower_bound: float


def optimal_single_level(model: TruncatedNormal) -> float:
    """Closed-form optimal single level on [0, 1] for a truncated normal."""
    mu, sigma = model.mu, model.sigma
    lo, hi = model.support
    if (lo, hi) != (0.0, 1.0):
        raise ValueError("single-level design needs a model on [0, 1]")
    Delta = special.ndtr((1 - mu) / sigma) - special.ndtr(-mu / sigma)
    delta = _phi((1 - mu) / sigma) - _phi(-mu / sigma)
    y = Delta * (1 - mu) + sigma * delta + special.ndtr(-mu / sigma)
    return float(sigma * special.ndtri(y) + mu)


def _phi(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def single_level_gap(model: TruncatedNormal, d: int = 1, b_hat: float = 0.5) -> SingleLevelGap:
    """Strong-convexity lower bound on the variance lost by the worst-case
    level ``b_hat`` instead of the optimum, for ``d`` coordinates."""
    b_star = optimal_single_level(model)
    gamma = min(float(model.pdf(b_star)), float(model.pdf(b_hat)))
    gap = 0.5 * d * gamma * (b_star - b_hat) ** 2
    return SingleLevelGap(b_star, b_hat, gamma, gap)

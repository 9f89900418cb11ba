"""Level design: variance objective, its derivatives, and the solvers.

All solvers work on the law of the rounded magnitude on [0, 1].  For
non-symmetric level sets that is the model itself; for symmetric sets the
signed model on [-1, 1] is folded onto [0, 1] (see ``FoldedMeasure``), and
the innermost bin ``[0, l_1]`` has variance ``l_1^2 - x^2`` instead of the
generic ``(c - x)(x - a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .distributions import (
    SIGNED_SUPPORT,
    UNSIGNED_SUPPORT,
    FoldedMeasure,
    MixtureModel,
    TruncatedNormal,
)
from .levels import MIN_SEPARATION, LevelSet, exponential_levels, uniform_levels

P_EPS = 1e-6
_KEEP_MASS = 1e-14


@dataclass(frozen=True)
class SolverConfig:
    max_sweeps: int = 50
    level_tol: float = 1e-6
    bisect_tol: float = 1e-10
    bisect_max_iter: int = 200
    gd_rate: float = 0.1
    gd_steps: int = 500
    init: str = "both"  # uniform | exponential | both
    init_p: float = 0.5

    def __post_init__(self):
        if not (self.level_tol > 0 and self.bisect_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.gd_rate > 0:
            raise ValueError("gd_rate must be positive")
        if self.init not in ("uniform", "exponential", "both"):
            raise ValueError(f"init must be uniform, exponential or both, got {self.init!r}")
        if not 0 < self.init_p < 1:
            raise ValueError("init_p must lie in (0, 1)")
        if self.max_sweeps < 1 or self.gd_steps < 0:
            raise ValueError("max_sweeps must be >= 1 and gd_steps >= 0")


class Objective:
    """Expected (normalized) variance of rounding against a coordinate model.

    ``weighted=True`` keeps the mixture weights of ``model`` (norm-weighted
    objective when they are ``||v_n||^2`` proportional); ``weighted=False``
    replaces them with uniform weights, giving the plain marginal law of
    normalized coordinates.
    """

    def __init__(self, model, weighted: bool = True, symmetric: bool = False):
        if isinstance(model, TruncatedNormal):
            model = MixtureModel.single(model)
        if not weighted and len(model) > 1:
            model = MixtureModel(model.components)
        expected = SIGNED_SUPPORT if symmetric else UNSIGNED_SUPPORT
        if tuple(model.support) != expected:
            raise ValueError(
                f"{'symmetric' if symmetric else 'non-symmetric'} objective needs a "
                f"model on {expected}, got {model.support}"
            )
        self.model = model
        self.weighted = weighted
        self.symmetric = symmetric
        self.measure = FoldedMeasure(model) if symmetric else model

    def check(self, levels: LevelSet):
        if levels.symmetric != self.symmetric:
            raise ValueError(
                f"level set symmetric={levels.symmetric} does not match objective "
                f"symmetric={self.symmetric}"
            )

    def mass(self, a, b):
        return np.asarray(self.measure.cdf(b)) - np.asarray(self.measure.cdf(a))


@dataclass
class SolveResult:
    levels: LevelSet
    psi: float
    psi_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    init: str = ""
    p: float | None = None


def _positive(levels: LevelSet) -> np.ndarray:
    return levels.positive


def _bin_moments(P, obj: Objective):
    a, c = P[:-1], P[1:]
    m0, m1, m2 = obj.measure.moments(a, c, a)
    return a, c, np.asarray(m0), np.asarray(m1), np.asarray(m2)


def bin_costs(P, obj: Objective) -> np.ndarray:
    """Variance contribution of each bin of the positive grid ``P``."""
    a, c, m0, m1, m2 = _bin_moments(np.asarray(P, dtype=float), obj)
    cost = (c - a) * m1 - m2
    if obj.symmetric:
        cost[0] = c[0] * c[0] * m0[0] - m2[0]
    return np.maximum(cost, 0.0)


def psi(levels: LevelSet, obj: Objective) -> float:
    obj.check(levels)
    return float(bin_costs(_positive(levels), obj).sum())


def psi_gradient(levels: LevelSet, obj: Objective) -> np.ndarray:
    """``d psi / d l_j`` for ``j = 1..s``."""
    obj.check(levels)
    P = _positive(levels)
    a, c, m0, m1, _ = _bin_moments(P, obj)
    left = m1.copy()  # int_{l_{j-1}}^{l_j} (r - l_{j-1}) dF
    if obj.symmetric:
        left[0] = 2.0 * c[0] * m0[0]
    right = (c - a) * m0 - m1  # int_{l_j}^{l_{j+1}} (l_{j+1} - r) dF
    return left[:-1] - right[1:]


def _bisect(fn, lo, hi, tol, max_iter):
    """Root of an increasing function on [lo, hi] (clamped to the ends).

    Bracketing root finder (bisection safeguarded), so the bracket is never
    left and the result is within ``tol`` of the root.
    """
    flo = fn(lo)
    if flo >= 0:
        return lo
    fhi = fn(hi)
    if fhi <= 0:
        return hi
    try:
        return optimize.brentq(fn, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                               maxiter=max_iter)
    except RuntimeError:
        # not converged within max_iter: fall back to plain halving
        for _ in range(max_iter):
            if hi - lo <= tol:
                break
            mid = 0.5 * (lo + hi)
            if fn(mid) < 0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def single_level_update(a: float, c: float, obj: Objective, cfg: SolverConfig | None = None,
                        inner: bool = False) -> float:
    """Optimal position of one level between fixed neighbours ``a < c``.

    Generic bins solve ``F(b) - F(a) = int_a^c (c - r)/(c - a) dF``, the
    first-order condition of the convex one-level problem.  ``inner=True``
    handles the first level of a symmetric grid on ``[0, c]``:
    ``2 b G([0, b]) = int_b^c (c - r) dG``.
    """
    cfg = cfg or SolverConfig()
    m = obj.measure
    if inner:
        def fn(b):
            lm0 = float(m.cdf(b)) - float(m.cdf(0.0))
            r0, r1, _ = m.moments(b, c, c)
            return 2.0 * b * lm0 + float(r1)
    else:
        r0, r1, _ = m.moments(a, c, c)
        target = -float(r1) / (c - a)
        fa = float(m.cdf(a))

        def fn(b):
            return float(m.cdf(b)) - fa - target
    return _bisect(fn, a, c, cfg.bisect_tol, cfg.bisect_max_iter)


def alq_sweep(levels: LevelSet, obj: Objective, cfg: SolverConfig | None = None) -> LevelSet:
    """One Gauss-Seidel pass of single-level updates in ascending order."""
    cfg = cfg or SolverConfig()
    obj.check(levels)
    P = _positive(levels).copy()
    sep = 2 * MIN_SEPARATION
    for j in range(1, len(P) - 1):
        a, c = P[j - 1], P[j + 1]
        inner = obj.symmetric and j == 1
        if float(obj.mass(0.0 if inner else a, c)) < _KEEP_MASS:
            continue
        b = single_level_update(a, c, obj, cfg, inner=inner)
        P[j] = min(max(b, a + sep), c - sep)
    return levels.with_interior(P[1:-1])


def _initial_levels(s: int, symmetric: bool, cfg: SolverConfig):
    inits = []
    if cfg.init in ("uniform", "both"):
        inits.append(("uniform", uniform_levels(s, symmetric)))
    if cfg.init in ("exponential", "both"):
        inits.append(("exponential", exponential_levels(s, cfg.init_p, symmetric)))
    return inits


def _alq_run(start: LevelSet, obj: Objective, cfg: SolverConfig, label: str) -> SolveResult:
    cur = start
    trace = [psi(cur, obj)]
    converged = False
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        nxt = alq_sweep(cur, obj, cfg)
        val = psi(nxt, obj)
        # exact per-level minimization: any rise is round-off
        if val > trace[-1] + 1e-12 * max(1.0, abs(trace[-1])):
            raise AssertionError(f"coordinate descent increased psi: {trace[-1]} -> {val}")
        move = float(np.max(np.abs(np.array(nxt.interior) - np.array(cur.interior)), initial=0.0))
        cur = nxt
        trace.append(val)
        if move < cfg.level_tol:
            converged = True
            break
    return SolveResult(cur, trace[-1], trace, sweeps, converged, label)


def alq_solve(s: int, obj: Objective, cfg: SolverConfig | None = None,
              warm_start: LevelSet | None = None, symmetric: bool | None = None) -> SolveResult:
    """Coordinate descent from each configured start; lowest psi wins.

    ``warm_start`` (typically the levels currently in use) is tried as an
    extra start.  Ties keep the earlier start.
    """
    cfg = cfg or SolverConfig()
    symmetric = obj.symmetric if symmetric is None else symmetric
    starts = _initial_levels(s, symmetric, cfg)
    if warm_start is not None:
        if warm_start.s != s:
            raise ValueError("warm start has a different level count")
        starts.append(("warm", warm_start))
    best = None
    for label, lv in starts:
        res = _alq_run(lv, obj, cfg, label)
        if best is None or res.psi < best.psi:
            best = res
    return best


def gd_step(levels: LevelSet, obj: Objective, rate: float, grad: np.ndarray | None = None) -> LevelSet:
    """Projection-free gradient step: each level moves by at most half the
    distance to its nearest neighbour."""
    P = _positive(levels)
    g = psi_gradient(levels, obj) if grad is None else grad
    delta = np.minimum(P[1:-1] - P[:-2], P[2:] - P[1:-1])
    step = np.sign(g) * np.minimum(rate * np.abs(g), delta / 2)
    new = P[1:-1] - step
    # the half-gap cap keeps order; guard against collapse below the minimum separation
    full = np.concatenate([[0.0], new, [1.0]])
    if np.any(np.diff(full) < MIN_SEPARATION):
        return levels
    return levels.with_interior(new)


def gd_solve(s: int, obj: Objective, cfg: SolverConfig | None = None,
             start: LevelSet | None = None) -> SolveResult:
    """Gradient descent with the capped step; the rate halves whenever a
    step would increase psi (that step is rejected)."""
    cfg = cfg or SolverConfig()
    cur = start if start is not None else _initial_levels(s, obj.symmetric, cfg)[0][1]
    val = psi(cur, obj)
    trace = [val]
    rate = cfg.gd_rate
    converged = False
    it = 0
    for it in range(1, cfg.gd_steps + 1):
        nxt = gd_step(cur, obj, rate)
        nval = psi(nxt, obj)
        if nval > val:
            rate *= 0.5
            if rate < 1e-12:
                converged = True
                break
            continue
        move = float(np.max(np.abs(np.array(nxt.interior) - np.array(cur.interior)), initial=0.0))
        cur, val = nxt, nval
        trace.append(val)
        if move < cfg.level_tol * rate:
            converged = True
            break
    return SolveResult(cur, val, trace, it, converged, "gd")


# --- exponentially spaced levels -------------------------------------------

def amq_levels(p: float, s: int, symmetric: bool = True) -> LevelSet:
    return exponential_levels(s, p, symmetric)


def amq_psi(p: float, s: int, obj: Objective) -> float:
    return psi(amq_levels(p, s, obj.symmetric), obj)


def amq_derivative(p: float, s: int, obj: Objective) -> float:
    """``d psi / d p`` for the grid ``{p^s, ..., p, 1}``.

    Symmetric objectives use the direct bin-wise expansion; non-symmetric
    ones go through the chain rule on the level gradient.
    """
    if obj.symmetric:
        x = p ** np.arange(s, -1, -1, dtype=float)  # p^s, ..., p, 1
        P = np.concatenate([[0.0], x])
        m0, m1, _ = obj.measure.moments(P[:-1], P[1:], 0.0)
        m0, m1 = np.asarray(m0), np.asarray(m1)
        total = 2 * s * p ** (2 * s - 1) * m0[0]
        # bin between p^{j+1} and p^j sits at position s - j in P
        for j in range(s):
            k = s - j
            coef = (j * p ** (j - 1) if j else 0.0) + (j + 1) * p ** j
            total += coef * m1[k] - (2 * j + 1) * p ** (2 * j) * m0[k]
        return float(total)
    lv = amq_levels(p, s, False)
    g = psi_gradient(lv, obj)
    k = np.arange(s, 0, -1, dtype=float)
    return float(np.dot(g, k * p ** (k - 1)))


def amq_step(p: float, s: int, obj: Objective, rate: float) -> float:
    """Gradient step on the multiplier, clamped to ``(eps, 1 - eps)``."""
    g = amq_derivative(p, s, obj)
    return float(min(max(p - rate * g, P_EPS), 1.0 - P_EPS))


def amq_solve(s: int, obj: Objective, cfg: SolverConfig | None = None, p0: float | None = None) -> SolveResult:
    cfg = cfg or SolverConfig()
    p = cfg.init_p if p0 is None else float(p0)
    p = min(max(p, P_EPS), 1 - P_EPS)
    val = amq_psi(p, s, obj)
    trace = [val]
    rate = cfg.gd_rate
    converged = False
    it = 0
    for it in range(1, cfg.gd_steps + 1):
        cand = amq_step(p, s, obj, rate)
        if not _valid_multiplier(cand, s):
            rate *= 0.5
            continue
        cval = amq_psi(cand, s, obj)
        if cval > val:
            rate *= 0.5
            if rate < 1e-12:
                converged = True
                break
            continue
        move = abs(cand - p)
        p, val = cand, cval
        trace.append(val)
        if move < cfg.level_tol * min(rate, 1.0):
            converged = True
            break
    return SolveResult(amq_levels(p, s, obj.symmetric), val, trace, it, converged, "amq", p)


def _valid_multiplier(p: float, s: int) -> bool:
    try:
        exponential_levels(s, p)
    except ValueError:
        return False
    return True


# --- exhaustive oracle -----------------------------------------------------

def brute_force_levels(s: int, obj: Objective, resolution: float = 1e-3) -> LevelSet:
    """Global minimizer of psi over levels restricted to a uniform grid.

    Dynamic program over bins; cost ``O(s n^2)`` with ``n = 1/resolution``.
    """
    if s < 1:
        raise ValueError("brute force needs s >= 1")
    if s > 3:
        raise ValueError("brute force is limited to s <= 3")
    n = int(round(1.0 / resolution))
    if n < s + 1:
        raise ValueError("resolution too coarse for this many levels")
    x = np.linspace(0.0, 1.0, n + 1)
    M0, M1, M2 = (np.asarray(m) for m in obj.measure.moments(np.zeros_like(x), x, 0.0))
    # C[i, j] = cost of the bin [x_i, x_j]
    d0 = M0[None, :] - M0[:, None]
    d1 = M1[None, :] - M1[:, None]
    d2 = M2[None, :] - M2[:, None]
    xa = x[:, None]
    xc = x[None, :]
    C = (xa + xc) * d1 - d2 - xa * xc * d0
    C = np.where(xc > xa, np.maximum(C, 0.0), np.inf)
    if obj.symmetric:
        first = x * x * M0 - M2  # inner bin [0, x_j]
    else:
        first = C[0]
    first = first.copy()
    first[0] = np.inf
    D = first
    back = []
    for _ in range(s - 1):
        tot = D[:, None] + C
        arg = np.argmin(tot, axis=0)
        back.append(arg)
        D = tot[arg, np.arange(n + 1)]
    final = D + C[:, n]
    final[n] = np.inf
    j = int(np.argmin(final))
    idx = [j]
    for arg in reversed(back):
        j = int(arg[j])
        idx.append(j)
    idx.reverse()
    return LevelSet(tuple(x[i] for i in idx), obj.symmetric)


def two_level_convexity_condition(a: float, b: float, obj: Objective) -> bool:
    """Sufficient condition for positive definiteness of the two-level
    Hessian at ``(a, b)``: ``b (1 - a) p(a) p(b) > (F(b) - F(a))^2``.

    Diagnostic only; solvers never gate on it.
    """
    m = obj.measure
    pa, pb = float(m.pdf(a)), float(m.pdf(b))
    return b * (1 - a) * pa * pb > float(obj.mass(a, b)) ** 2

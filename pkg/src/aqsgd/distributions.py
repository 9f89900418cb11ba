"""Normal and truncated-normal numerics, mixtures, and the norm-weighted CDF.

Every solver in the package consumes a distribution through the small
"measure" interface implemented here:

* ``cdf(x)``
* ``moments(a, b, shift)`` -> ``(m0, m1, m2)`` with
  ``m_k = integral_a^b (r - shift)^k dF(r)``

Truncated-normal moments are evaluated in closed form from the CDF and PDF,
using ``d p(r) / dr = -(r - mu) / sigma^2 * p(r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
SIGMA_FLOOR = 1e-8
_MIN_MASS_LOG = math.log(1e-300)

UNSIGNED_SUPPORT = (0.0, 1.0)
SIGNED_SUPPORT = (-1.0, 1.0)


class DegenerateDistributionError(ValueError):
    """Raised when a truncation interval carries (numerically) no mass."""


@dataclass(frozen=True)
class NormalParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValueError(f"normal parameters must be finite, got {self}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def normal_pdf(x, p: NormalParams):
    z = (np.asarray(x, dtype=float) - p.mu) / p.sigma
    return np.exp(-0.5 * z * z - LOG_SQRT_2PI) / p.sigma


def normal_cdf(x, p: NormalParams):
    """CDF of N(mu, sigma^2); saturates to 0/1 for extreme ``x``."""
    out = special.ndtr((np.asarray(x, dtype=float) - p.mu) / p.sigma)
    return float(out) if np.ndim(out) == 0 else out


def normal_inv_cdf(y, p: NormalParams):
    y_arr = np.asarray(y, dtype=float)
    if np.any((y_arr <= 0.0) | (y_arr >= 1.0)) or np.any(~np.isfinite(y_arr)):
        raise ValueError("normal_inv_cdf requires 0 < y < 1")
    out = p.mu + p.sigma * special.ndtri(y_arr)
    return float(out) if np.ndim(out) == 0 else out


def _col(a, ndim):
    return a.reshape((-1,) + (1,) * ndim)


class _TruncatedBank:
    """Vectorized evaluation of K truncated normals sharing one support.

    Intervals lying to the right of their mean (alpha > 0) are evaluated
    through the survival function so that both tails keep full precision.
    """

    def __init__(self, mu, sigma, lo: float, hi: float):
        self.mu = np.asarray(mu, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.lo = float(lo)
        self.hi = float(hi)
        self.alpha = (self.lo - self.mu) / self.sigma
        self.beta = (self.hi - self.mu) / self.sigma
        self.right = self.alpha > 0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            self.lpa = special.log_ndtr(self.alpha)
            self.lpb = special.log_ndtr(self.beta)
            self.lqa = special.log_ndtr(-self.alpha)
            self.lqb = special.log_ndtr(-self.beta)
            left_den = -np.expm1(self.lpa - self.lpb)
            right_den = -np.expm1(self.lqb - self.lqa)
            log_z = np.where(
                self.right,
                self.lqa + np.log(right_den),
                self.lpb + np.log(left_den),
            )
        if np.any(~np.isfinite(log_z)) or np.any(log_z < _MIN_MASS_LOG):
            raise DegenerateDistributionError(
                "truncation interval carries less than 1e-300 of the parent mass"
            )
        self.left_den = left_den
        self.right_den = right_den
        self.log_z = log_z

    def _xi(self, x):
        xc = np.clip(x, self.lo, self.hi)
        return (xc[None, ...] - _col(self.mu, x.ndim)) / _col(self.sigma, x.ndim)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        n = x.ndim
        xi = self._xi(x)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lpx = special.log_ndtr(xi)
            lqx = special.log_ndtr(-xi)
            left = np.exp(lpx - _col(self.lpb, n)) * (
                -np.expm1(_col(self.lpa, n) - lpx)
            ) / _col(self.left_den, n)
            right = -np.expm1(lqx - _col(self.lqa, n)) / _col(self.right_den, n)
        out = np.where(_col(self.right, n), right, left)
        return np.clip(out, 0.0, 1.0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        n = x.ndim
        xi = self._xi(x)
        logp = (
            -0.5 * xi * xi
            - LOG_SQRT_2PI
            - _col(np.log(self.sigma), n)
            - _col(self.log_z, n)
        )
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside[None, ...], np.exp(logp), 0.0)

    def moments(self, a, b, shift):
        a, b, shift = np.broadcast_arrays(
            np.asarray(a, dtype=float),
            np.asarray(b, dtype=float),
            np.asarray(shift, dtype=float),
        )
        a = np.clip(a, self.lo, self.hi)
        b = np.clip(b, self.lo, self.hi)
        fa, fb = self.cdf(a), self.cdf(b)
        pa, pb = self.pdf(a), self.pdf(b)
        n = a.ndim
        mu_s = _col(self.mu, n) - shift[None, ...]
        s2 = _col(self.sigma, n) ** 2
        m0 = fb - fa
        m1 = mu_s * m0 - s2 * (pb - pa)
        m2 = -s2 * ((b - shift) * pb - (a - shift) * pa) + s2 * m0 + mu_s * m1
        return m0, m1, m2


@dataclass(frozen=True)
class TruncatedNormal:
    params: NormalParams
    lo: float
    hi: float
    _bank: _TruncatedBank = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        bank = _TruncatedBank([self.params.mu], [self.params.sigma], self.lo, self.hi)
        object.__setattr__(self, "_bank", bank)

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def sigma(self) -> float:
        return self.params.sigma

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    @property
    def log_mass(self) -> float:
        """log(F_N(hi) - F_N(lo)) of the parent normal."""
        return float(self._bank.log_z[0])

    def cdf(self, x):
        out = self._bank.cdf(x)[0]
        return float(out) if out.ndim == 0 else out

    def pdf(self, x):
        out = self._bank.pdf(x)[0]
        return float(out) if out.ndim == 0 else out

    def inv_cdf(self, y):
        y_arr = np.asarray(y, dtype=float)
        if np.any((y_arr < 0.0) | (y_arr > 1.0)) or np.any(~np.isfinite(y_arr)):
            raise ValueError("trunc_inv_cdf requires 0 <= y <= 1")
        bk = self._bank
        with np.errstate(divide="ignore"):
            if bk.right[0]:
                lqx = bk.lqa[0] + np.log1p(-y_arr * bk.right_den[0])
                xi = -special.ndtri_exp(lqx)
            else:
                lpx = np.logaddexp(bk.lpa[0], np.log(y_arr) + bk.log_z[0])
                xi = special.ndtri_exp(np.minimum(lpx, 0.0))
        out = np.clip(self.mu + self.sigma * xi, self.lo, self.hi)
        out = np.where(y_arr <= 0.0, self.lo, np.where(y_arr >= 1.0, self.hi, out))
        return float(out) if out.ndim == 0 else out

    def moments(self, a, b, shift=0.0):
        m0, m1, m2 = self._bank.moments(a, b, shift)
        return m0[0], m1[0], m2[0]

    def mean(self) -> float:
        return float(self.moments(self.lo, self.hi)[1])


def trunc_cdf(x, t: TruncatedNormal):
    return t.cdf(x)


def trunc_pdf(x, t: TruncatedNormal):
    return t.pdf(x)


def trunc_inv_cdf(y, t: TruncatedNormal):
    return t.inv_cdf(y)


class MixtureModel:
    """Weighted sum of truncated normals on a common support.

    With weights ``gamma_n = ||v_n||^2 / sum ||v_n||^2`` the mixture CDF is the
    norm-weighted CDF used for expected-variance minimization; with uniform
    weights it is the plain marginal CDF of normalized coordinates.
    """

    def __init__(self, components: Sequence[TruncatedNormal], weights=None):
        components = list(components)
        if not components:
            raise ValueError("mixture needs at least one component")
        supports = {c.support for c in components}
        if len(supports) != 1:
            raise ValueError(f"mixture components must share one support, got {supports}")
        if weights is None:
            weights = np.full(len(components), 1.0 / len(components))
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(components),) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be nonnegative, finite, one per component")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must not all be zero")
        if abs(total - 1.0) > 1e-12:
            w = w / total
        self.components = tuple(components)
        self.weights = w
        self.lo, self.hi = components[0].support
        self._bank = _TruncatedBank(
            [c.mu for c in components], [c.sigma for c in components], self.lo, self.hi
        )

    @classmethod
    def single(cls, t: TruncatedNormal) -> "MixtureModel":
        return cls([t], [1.0])

    @classmethod
    def from_params(cls, mus, sigmas, lo, hi, weights=None) -> "MixtureModel":
        comps = [
            TruncatedNormal(NormalParams(float(m), float(s)), lo, hi)
            for m, s in zip(mus, sigmas)
        ]
        return cls(comps, weights)

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def __len__(self):
        return len(self.components)

    def __repr__(self):
        parts = ", ".join(
            f"({c.mu:.4g}, {c.sigma:.4g}; {w:.3g})"
            for c, w in zip(self.components, self.weights)
        )
        return f"MixtureModel[{self.lo}, {self.hi}]({parts})"

    def _reduce(self, per_comp):
        return np.tensordot(self.weights, per_comp, axes=(0, 0))

    def cdf(self, x):
        out = self._reduce(self._bank.cdf(x))
        return float(out) if np.ndim(out) == 0 else out

    def pdf(self, x):
        out = self._reduce(self._bank.pdf(x))
        return float(out) if np.ndim(out) == 0 else out

    def moments(self, a, b, shift=0.0):
        m0, m1, m2 = self._bank.moments(a, b, shift)
        return self._reduce(m0), self._reduce(m1), self._reduce(m2)

    def partial_expectation(self, a, c):
        """``integral_a^c r dF(r)`` in closed form, summed over components."""
        return self.moments(a, c, 0.0)[1]

    def inv_cdf(self, y, tol: float = 1e-12, max_iter: int = 200) -> float:
        if not 0.0 <= y <= 1.0:
            raise ValueError("inv_cdf requires 0 <= y <= 1")
        if len(self.components) == 1:
            return self.components[0].inv_cdf(y)
        lo, hi = self.lo, self.hi
        for _ in range(max_iter):
            if hi - lo <= tol:
                break
            mid = 0.5 * (lo + hi)
            if self.cdf(mid) < y:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)


def mixture_cdf(x, m: MixtureModel):
    return m.cdf(x)


def mixture_pdf(x, m: MixtureModel):
    return m.pdf(x)


def partial_expectation(a, c, m: MixtureModel):
    return m.partial_expectation(a, c)


class FoldedMeasure:
    """Law of ``|r|`` for a model of signed coordinates on [-1, 1].

    ``G(x) = F(x) - F(-x)`` on [0, 1].  For an even density this is
    ``2 (F(x) - F(0))``, the form in which symmetric-level objectives are
    usually written.
    """

    def __init__(self, signed):
        if tuple(signed.support) != SIGNED_SUPPORT:
            raise ValueError(f"folding needs a model on [-1, 1], got {signed.support}")
        self.signed = signed
        self.lo, self.hi = UNSIGNED_SUPPORT

    @property
    def support(self):
        return UNSIGNED_SUPPORT

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        out = np.asarray(self.signed.cdf(x)) - np.asarray(self.signed.cdf(-x))
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.signed.pdf(x)) + np.asarray(self.signed.pdf(-x))
        return float(out) if out.ndim == 0 else out

    def moments(self, a, b, shift=0.0):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        shift = np.asarray(shift, dtype=float)
        p0, p1, p2 = self.signed.moments(a, b, shift)
        n0, n1, n2 = self.signed.moments(-b, -a, -shift)
        return p0 + n0, p1 - n1, p2 + n2


def fit_truncated_normal(samples, lo: float, hi: float) -> TruncatedNormal:
    """Moment-matched truncated normal: parent mu/sigma are the sample mean
    and (ddof=1) standard deviation of the observed coordinates.

    This is an approximation; the observed moments are those of the
    truncated law, not of the parent normal.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least 2 samples to fit a truncated normal")
    if np.any(~np.isfinite(x)) or np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"samples must be finite and lie in [{lo}, {hi}]")
    mu = float(np.mean(x))
    sigma = max(float(np.std(x, ddof=1)), SIGMA_FLOOR)
    return TruncatedNormal(NormalParams(mu, sigma), lo, hi)

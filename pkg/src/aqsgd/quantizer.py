"""Stochastic bucketed quantization onto a level set.

Each bucket of ``bucket_size`` consecutive coordinates is normalized by its
L^q norm.  Non-symmetric grids round the magnitude ``r = |v_i| / ||v||`` onto
``[0, l_1, ..., 1]`` and keep the sign separately; symmetric grids round the
signed ratio onto the mirrored grid on [-1, 1].  Rounding picks the upper
neighbour with probability equal to the relative distance from the lower
one, which makes the quantizer unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .levels import LevelSet, NormKind


class QuantizerInputError(ValueError):
    """Raised for non-finite inputs."""


class CorruptGradientError(ValueError):
    """Raised when a quantized gradient is inconsistent with its level set."""


@dataclass(frozen=True)
class BucketConfig:
    """Bucketing policy.

    A vector shorter than one bucket is quantized as a single short bucket.
    When a vector spans at least one full bucket, an undersized final
    bucket is passed through in full precision.
    """

    bucket_size: int = 8192
    norm: NormKind = field(default_factory=NormKind)

    def __post_init__(self):
        if int(self.bucket_size) != self.bucket_size or self.bucket_size < 1:
            raise ValueError(f"bucket_size must be a positive integer, got {self.bucket_size}")
        object.__setattr__(self, "bucket_size", int(self.bucket_size))
        object.__setattr__(self, "norm", NormKind.parse(self.norm))

    def split(self, d: int) -> tuple[int, int, int]:
        """``(bucket_count, width, tail_len)`` for a length-``d`` vector."""
        bs = self.bucket_size
        if d < bs:
            return (1, d, 0) if d > 0 else (0, bs, 0)
        full, rem = divmod(d, bs)
        return full, bs, rem


@dataclass(frozen=True, eq=False)
class QuantizedGradient:
    """Pre-encoding representation.

    ``indices`` has shape ``(bucket_count, width)`` and indexes
    ``levels.grid``.  ``negative`` carries signs for non-symmetric grids and
    is False wherever the index is 0; symmetric grids carry no separate
    sign (``negative`` is all False).  ``tail`` holds raw coordinates of an
    undersized last bucket.
    """

    d: int
    s: int
    symmetric: bool
    norms: np.ndarray
    indices: np.ndarray
    negative: np.ndarray
    tail: np.ndarray

    @property
    def bucket_count(self) -> int:
        return int(self.indices.shape[0])

    @property
    def width(self) -> int:
        return int(self.indices.shape[1]) if self.indices.ndim == 2 else 0

    def same_as(self, other: "QuantizedGradient") -> bool:
        return (
            self.d == other.d
            and self.s == other.s
            and self.symmetric == other.symmetric
            and np.array_equal(self.norms, other.norms)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.negative, other.negative)
            and np.array_equal(self.tail, other.tail)
        )


def _check_finite(v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise QuantizerInputError("expected a 1-D vector")
    if not np.all(np.isfinite(v)):
        bad = int(np.flatnonzero(~np.isfinite(v))[0])
        raise QuantizerInputError(f"non-finite coordinate at index {bad}")
    return v


def normalize_buckets(v, cfg: BucketConfig):
    """Split ``v`` into buckets; returns ``(ratios, norms, tail)``.

    ``ratios`` are the signed coordinates divided by their bucket norm
    (0 for zero-norm buckets), clamped to [-1, 1].
    """
    v = _check_finite(v)
    n_b, width, tail_len = cfg.split(v.size)
    body = v[: n_b * width].reshape(n_b, width)
    tail = v[n_b * width :].copy()
    norms = cfg.norm(body)
    safe = np.where(norms > 0, norms, 1.0)
    ratios = np.clip(body / safe[:, None], -1.0, 1.0)
    ratios[norms == 0] = 0.0
    return ratios, norms, tail


def bucket_ratios(v, cfg: BucketConfig, symmetric: bool):
    """Values actually rounded: ``|u|`` for non-symmetric, ``u`` for symmetric."""
    ratios, norms, _ = normalize_buckets(v, cfg)
    return (ratios if symmetric else np.abs(ratios)), norms


def rounding_plan(r: np.ndarray, grid: np.ndarray):
    """Lower neighbour index ``k`` and round-up probability ``rho`` of ``r``.

    Values exactly on a grid point get ``rho = 0`` (the top point gets
    ``k = len(grid) - 2, rho = 1``), so they round deterministically.
    """
    k = np.searchsorted(grid, r, side="right") - 1
    k = np.clip(k, 0, len(grid) - 2)
    lo = grid[k]
    rho = (r - lo) / (grid[k + 1] - lo)
    return k, rho


def round_to_grid(r: np.ndarray, grid: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Stochastic rounding of ``r`` onto ``grid`` driven by uniforms ``u``."""
    k, rho = rounding_plan(r, grid)
    return k + (u < rho)


def quantize(v, levels: LevelSet, cfg: BucketConfig, rng: np.random.Generator) -> QuantizedGradient:
    """One unbiased random quantization of ``v``.

    One uniform is drawn per quantized coordinate, in coordinate order.
    """
    ratios, norms, tail = normalize_buckets(v, cfg)
    d = int(np.asarray(v).size)
    u = rng.random(ratios.shape)
    if levels.symmetric:
        idx = round_to_grid(ratios, levels.grid, u)
        neg = np.zeros(ratios.shape, dtype=bool)
    else:
        idx = round_to_grid(np.abs(ratios), levels.grid, u)
        neg = (ratios < 0) & (idx > 0)
    idx = idx.astype(np.int32)
    if levels.symmetric:
        # zero buckets: ratio 0 lands in the inner bin at random; pin to 0
        idx[norms == 0] = 0
    return QuantizedGradient(d, levels.s, levels.symmetric, norms, idx, neg, tail)


def dequantize(qg: QuantizedGradient, levels: LevelSet) -> np.ndarray:
    if qg.s != levels.s or qg.symmetric != levels.symmetric:
        raise CorruptGradientError(
            f"quantized gradient (s={qg.s}, symmetric={qg.symmetric}) does not "
            f"match level set (s={levels.s}, symmetric={levels.symmetric})"
        )
    idx = qg.indices
    if idx.size and (idx.min() < 0 or idx.max() >= levels.num_symbols):
        raise CorruptGradientError(
            f"level index out of range [0, {levels.num_symbols - 1}]"
        )
    vals = levels.grid[idx]
    if not qg.symmetric:
        vals = np.where(qg.negative, -vals, vals)
    body = (vals * qg.norms[:, None]).ravel()
    out = np.concatenate([body, qg.tail])
    if out.size != qg.d:
        raise CorruptGradientError(f"expected {qg.d} coordinates, got {out.size}")
    return out


def coordinate_variance(r, levels: LevelSet):
    """Rounding variance ``(l_{u+1} - r)(r - l_u)`` of a normalized value.

    ``r`` is a magnitude in [0, 1] for non-symmetric sets and a signed value
    in [-1, 1] for symmetric ones.  On the mirrored grid the inner bin gives
    ``l_1^2 - r^2``.
    """
    r = np.asarray(r, dtype=float)
    g = levels.grid
    k = np.clip(np.searchsorted(g, r, side="right") - 1, 0, len(g) - 2)
    out = np.maximum((g[k + 1] - r) * (r - g[k]), 0.0)
    return float(out) if out.ndim == 0 else out


def vector_variance(v, levels: LevelSet, cfg: BucketConfig) -> float:
    """Trace of the quantization covariance, ``sum_b ||v_b||^2 sum_i sigma^2(r_i)``."""
    r, norms = bucket_ratios(v, cfg, levels.symmetric)
    per_bucket = coordinate_variance(r, levels).sum(axis=-1)
    return float(np.dot(norms * norms, per_bucket))


def clip(v, c: float = 2.5) -> np.ndarray:
    """Clamp coordinates to ``[-c sigma, c sigma]``, sigma the population std."""
    if not c > 0:
        raise ValueError("clip factor must be positive")
    v = np.asarray(v, dtype=float)
    sd = float(np.std(v))
    if sd == 0.0:
        return v.copy()
    return np.clip(v, -c * sd, c * sd)


def empirical_variance_trace(
    vectors: Iterable, levels: LevelSet, cfg: BucketConfig, draws: int, rng: np.random.Generator
) -> float:
    """Mean over coordinates and draws of the squared quantization error."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    total = 0.0
    count = 0
    for v in vectors:
        v = np.asarray(v, dtype=float)
        for _ in range(draws):
            err = dequantize(quantize(v, levels, cfg, rng), levels) - v
            total += float(np.dot(err, err))
            count += v.size
    if count == 0:
        raise ValueError("empty gradient stream")
    return total / count

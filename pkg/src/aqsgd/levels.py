"""Quantization level sets and the fixed (non-adaptive) constructors."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

MIN_SEPARATION = 1e-9


@dataclass(frozen=True)
class NormKind:
    """L^q norm used to normalize a bucket; ``q = math.inf`` for max-norm."""

    q: float = 2.0

    def __post_init__(self):
        q = float(self.q)
        if math.isnan(q) or q < 1:
            raise ValueError(f"norm order must be >= 1 or inf, got {self.q}")
        object.__setattr__(self, "q", q)

    @classmethod
    def parse(cls, text) -> "NormKind":
        if isinstance(text, NormKind):
            return text
        t = str(text).strip().lower()
        if t in ("inf", "infinity", "linf", "max"):
            return cls(math.inf)
        return cls(float(t.lstrip("l")))

    @property
    def is_inf(self) -> bool:
        return math.isinf(self.q)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Norm along the last axis."""
        a = np.abs(x)
        if self.is_inf:
            return a.max(axis=-1) if a.shape[-1] else np.zeros(a.shape[:-1])
        if self.q == 2.0:
            return np.sqrt(np.einsum("...i,...i->...", a, a))
        if self.q == 1.0:
            return a.sum(axis=-1)
        m = a.max(axis=-1, keepdims=True)
        safe = np.where(m > 0, m, 1.0)
        return m[..., 0] * np.power(np.power(a / safe, self.q).sum(axis=-1), 1.0 / self.q)

    def __str__(self):
        return "inf" if self.is_inf else f"{self.q:g}"


@dataclass(frozen=True)
class LevelSet:
    """Ordered levels ``0 < l_1 < ... < l_s < 1`` with implicit endpoints.

    Non-symmetric sets quantize magnitudes on the grid ``[0, l_1, ..., l_s, 1]``
    (a sign bit travels separately).  Symmetric sets quantize signed values on
    the mirrored grid ``[-1, -l_s, ..., -l_1, l_1, ..., l_s, 1]``; there is no
    zero level.
    """

    interior: tuple[float, ...]
    symmetric: bool = False
    _grid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        lv = tuple(float(x) for x in self.interior)
        object.__setattr__(self, "interior", lv)
        full = (0.0,) + lv + (1.0,)
        if any(not math.isfinite(x) for x in lv):
            raise ValueError("levels must be finite")
        for lo, hi in zip(full, full[1:]):
            if not hi - lo >= MIN_SEPARATION:
                raise ValueError(
                    f"levels must be strictly increasing inside (0, 1) with "
                    f"separation >= {MIN_SEPARATION}, got {lv}"
                )
        if self.symmetric:
            pos = np.array(lv + (1.0,))
            grid = np.concatenate([-pos[::-1], pos])
        else:
            grid = np.array(full)
        grid.setflags(write=False)
        object.__setattr__(self, "_grid", grid)

    @property
    def s(self) -> int:
        return len(self.interior)

    @property
    def grid(self) -> np.ndarray:
        """Materialized grid the quantizer rounds onto (read-only)."""
        return self._grid

    @property
    def positive(self) -> np.ndarray:
        """``[0, l_1, ..., l_s, 1]``."""
        return np.array((0.0,) + self.interior + (1.0,))

    @property
    def num_symbols(self) -> int:
        return len(self._grid)

    def value(self, index):
        return self._grid[index]

    def index_of(self, value) -> np.ndarray:
        """Grid index of values that lie exactly on grid points."""
        value = np.asarray(value, dtype=float)
        idx = np.searchsorted(self._grid, value)
        idx = np.clip(idx, 0, len(self._grid) - 1)
        if not np.all(self._grid[idx] == value):
            raise ValueError("value is not a grid point")
        return idx

    def digest(self) -> int:
        """Stable 64-bit identifier of the level set."""
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<?I", self.symmetric, self.s))
        h.update(struct.pack(f"<{self.s}d", *self.interior))
        return int.from_bytes(h.digest(), "little")

    def to_text(self) -> str:
        body = ",".join(repr(x) for x in self.interior)
        return f"sym:{body}" if self.symmetric else body

    @classmethod
    def from_text(cls, text: str) -> "LevelSet":
        text = text.strip()
        symmetric = text.startswith("sym:")
        if symmetric:
            text = text[4:]
        vals = [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
        return cls(tuple(vals), symmetric)

    def with_interior(self, interior) -> "LevelSet":
        return LevelSet(tuple(interior), self.symmetric)


def uniform_levels(s: int, symmetric: bool = False) -> LevelSet:
    if s < 1:
        raise ValueError("uniform_levels needs s >= 1")
    return LevelSet(tuple(j / (s + 1) for j in range(1, s + 1)), symmetric)


def exponential_levels(s: int, p: float, symmetric: bool = True) -> LevelSet:
    """``{p^s, ..., p}`` with 1 as the implicit top level.

    With ``symmetric=True`` (the default) the positive half of the grid is
    ``{p^s, ..., p, 1}`` and it is mirrored onto [-1, 0).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"exponential factor must lie in (0, 1), got {p}")
    if s < 1:
        raise ValueError("exponential_levels needs s >= 1")
    return LevelSet(tuple(p ** j for j in range(s, 0, -1)), symmetric)


def ternary_levels() -> LevelSet:
    """Magnitudes {0, 1} plus a sign bit, i.e. values {-1, 0, 1}.

    Conventionally used with max-norm normalization; clipping is a separate
    choice left to the caller.
    """
    return LevelSet((), symmetric=False)


def levels_for_bits(bits: int, symmetric: bool) -> int:
    """Interior level count ``s`` for a ``bits``-bit budget.

    ``2**bits`` nonzero levels: ``l_1..l_s, 1`` carried with a sign bit on
    non-symmetric grids (``s = 2**bits - 1``), or the ``2(s+1)`` signed
    values of a symmetric grid (``s = 2**(bits-1) - 1``).
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    n = 2 ** bits
    s = n // 2 - 1 if symmetric else n - 1
    if s < 1:
        raise ValueError(f"{bits} bit(s) leave no interior levels")
    return s

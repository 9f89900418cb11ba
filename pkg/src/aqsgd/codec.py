"""Entropy-coded wire format for quantized gradients.

Layout (integers little-endian, bit payloads MSB-first)::

    magic "AQG1" | version u8 | flags u8 | s u16 | bucket_size u32 |
    bucket_count u32 | level_hash u64 |
    symbol_count u16 | code_length u8 * symbol_count |
    per bucket: norm f32 | codewords (+ sign bit after each nonzero
                index on non-symmetric grids) | zero pad to byte |
    if flags bit1: tail_len u32 | tail f64 * tail_len

flags bit0 = symmetric grid, bit1 = raw tail present.  ``bucket_size`` is
the width actually used (a vector shorter than one bucket is a single
bucket of its own length).  The code-length table makes blobs
self-describing for inspection; decoding still checks it against the
receiver's table.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .bitio import BitReader, BitStreamError, BitWriter
from .distributions import SIGNED_SUPPORT, UNSIGNED_SUPPORT, FoldedMeasure, MixtureModel, TruncatedNormal
from .levels import LevelSet, NormKind
from .quantizer import QuantizedGradient

MAGIC = b"AQG1"
VERSION = 1
NORM_BITS = 32
PROB_FLOOR = 1e-12
_HEADER = struct.Struct("<4sBBHIIQ")
FLAG_SYMMETRIC = 1
FLAG_TAIL = 2


class CorruptBlobError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


# --- symbol statistics -----------------------------------------------------

def _grid_measure(levels: LevelSet, model):
    if isinstance(model, TruncatedNormal):
        model = MixtureModel.single(model)
    support = tuple(model.support)
    if levels.symmetric:
        if support != SIGNED_SUPPORT:
            raise ValueError(f"symmetric grid needs a model on [-1, 1], got {support}")
        return model
    if support == SIGNED_SUPPORT:
        return FoldedMeasure(model)
    if support != UNSIGNED_SUPPORT:
        raise ValueError(f"grid needs a model on [0, 1], got {support}")
    return model


def symbol_probs(levels: LevelSet, model) -> np.ndarray:
    """Probability of each grid point after stochastic rounding.

    A point collects the round-up mass of the bin below it and the
    round-down mass of the bin above it.
    """
    m = _grid_measure(levels, model)
    g = levels.grid
    a, c = g[:-1], g[1:]
    m0, m1, _ = m.moments(a, c, a)
    up = np.asarray(m1) / (c - a)
    down = np.asarray(m0) - up
    p = np.zeros(len(g))
    p[1:] += np.maximum(up, 0.0)
    p[:-1] += np.maximum(down, 0.0)
    total = p.sum()
    if total <= 0:
        raise ValueError("model puts no mass on the grid")
    return p / total


def entropy_bits(p) -> float:
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


# --- canonical Huffman -----------------------------------------------------

@dataclass(frozen=True)
class SymbolTable:
    probs: np.ndarray
    lengths: tuple
    codes: tuple

    @property
    def size(self) -> int:
        return len(self.lengths)

    @property
    def entropy(self) -> float:
        return entropy_bits(self.probs)

    @property
    def expected_length(self) -> float:
        return float(np.dot(self.probs, self.lengths))

    @property
    def kraft_sum(self) -> float:
        return float(sum(2.0 ** -n for n in self.lengths))

    def codeword(self, sym: int) -> str:
        n = self.lengths[sym]
        return format(self.codes[sym], f"0{n}b")

    @classmethod
    def from_lengths(cls, lengths, probs=None) -> "SymbolTable":
        lengths = tuple(int(n) for n in lengths)
        if not lengths or min(lengths) < 1:
            raise ValueError("code lengths must be >= 1")
        if sum(2.0 ** -n for n in lengths) > 1.0 + 1e-12:
            raise ValueError("code lengths violate the Kraft inequality")
        codes = _canonical_codes(lengths)
        if probs is None:
            probs = np.array([2.0 ** -n for n in lengths])
            probs = probs / probs.sum()
        return cls(np.asarray(probs, dtype=float), lengths, codes)


def _canonical_codes(lengths) -> tuple:
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    codes = [0] * len(lengths)
    code = 0
    prev = lengths[order[0]]
    for k, sym in enumerate(order):
        n = lengths[sym]
        if k:
            code = (code + 1) << (n - prev)
        codes[sym] = code
        prev = n
    return tuple(codes)


def build_huffman(probs) -> SymbolTable:
    """Canonical Huffman code.

    Probabilities are floored at 1e-12 and renormalized so every symbol stays
    encodable.  The two lightest subtrees are merged first; equal weights
    are ordered by the smallest symbol they contain.  Codewords are assigned
    in (length, symbol) order.  A one-symbol alphabet gets a 1-bit code.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(~np.isfinite(p)) or np.any(p < 0):
        raise ValueError("probabilities must be a nonempty finite nonnegative vector")
    p = np.maximum(p, PROB_FLOOR)
    p = p / p.sum()
    n = p.size
    if n == 1:
        return SymbolTable(p, (1,), (0,))
    depth = [0] * n
    heap = [(float(p[i]), i, [i]) for i in range(n)]
    heapq.heapify(heap)
    while len(heap) > 1:
        w1, k1, leaves1 = heapq.heappop(heap)
        w2, k2, leaves2 = heapq.heappop(heap)
        for leaf in leaves1:
            depth[leaf] += 1
        for leaf in leaves2:
            depth[leaf] += 1
        heapq.heappush(heap, (w1 + w2, min(k1, k2), leaves1 + leaves2))
    return SymbolTable(p, tuple(depth), _canonical_codes(depth))


class _Decoder:
    """Canonical decoding by code length."""

    def __init__(self, table: SymbolTable):
        lengths = table.lengths
        self.max_len = max(lengths)
        order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
        self.symbols = order
        self.first = {}
        self.count = {}
        self.offset = {}
        for k, sym in enumerate(order):
            n = lengths[sym]
            if n not in self.first:
                self.first[n] = table.codes[sym]
                self.offset[n] = k
                self.count[n] = 0
            self.count[n] += 1


# --- blobs -----------------------------------------------------------------

@dataclass(frozen=True)
class EncodedBlob:
    data: bytes
    bucket_bits: np.ndarray = field(repr=False)  # norm + payload bits per bucket, no padding

    def __len__(self):
        return len(self.data)

    @property
    def payload_bits(self) -> int:
        return int(self.bucket_bits.sum())


def _expand_bits(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Concatenate the low ``lengths[i]`` bits of ``values[i]``, MSB first."""
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.uint8)
    owner = np.repeat(np.arange(values.size), lengths)
    starts = np.cumsum(lengths) - lengths
    k = np.arange(total) - starts[owner]
    shift = (lengths[owner] - 1 - k).astype(np.uint64)
    return ((values[owner] >> shift) & np.uint64(1)).astype(np.uint8)


def encode(qg: QuantizedGradient, table: SymbolTable, levels: LevelSet) -> EncodedBlob:
    if table.size != levels.num_symbols:
        raise ValueError(f"table has {table.size} symbols, grid has {levels.num_symbols}")
    if qg.s != levels.s or qg.symmetric != levels.symmetric:
        raise ValueError("quantized gradient does not match the level set")
    if max(table.lengths) > 62:
        raise ValueError("code lengths above 62 bits are not supported")
    nb, width = qg.indices.shape if qg.indices.ndim == 2 else (0, 0)
    flags = (FLAG_SYMMETRIC if qg.symmetric else 0) | (FLAG_TAIL if qg.tail.size else 0)
    w = BitWriter()
    w.write_bytes(_HEADER.pack(MAGIC, VERSION, flags, qg.s, width, nb, levels.digest()))
    w.write_bytes(struct.pack("<H", table.size) + bytes(table.lengths))
    codes = np.array(table.codes, dtype=np.uint64)
    lens = np.array(table.lengths, dtype=np.int64)
    bucket_bits = np.zeros(nb, dtype=np.int64)
    if nb and (qg.indices.min() < 0 or qg.indices.max() >= table.size):
        raise ValueError("level index outside the symbol table")
    norms32 = qg.norms.astype("<f4")
    for b in range(nb):
        idx = qg.indices[b]
        vals = codes[idx]
        ln = lens[idx]
        if not qg.symmetric:
            nz = idx > 0
            vals = np.where(nz, (vals << np.uint64(1)) | qg.negative[b].astype(np.uint64), vals)
            ln = ln + nz
        w.write_bytes(norms32[b].tobytes())
        w.write_bits(_expand_bits(vals, ln))
        bucket_bits[b] = NORM_BITS + int(ln.sum())
        w.align()
    if qg.tail.size:
        w.write_bytes(struct.pack("<I", qg.tail.size) + qg.tail.astype("<f8").tobytes())
    return EncodedBlob(w.getvalue(), bucket_bits)


@dataclass
class BlobHeader:
    version: int
    symmetric: bool
    has_tail: bool
    s: int
    bucket_size: int
    bucket_count: int
    level_hash: int
    lengths: tuple
    body_offset: int


def read_header(data: bytes) -> BlobHeader:
    if len(data) < _HEADER.size + 2:
        raise CorruptBlobError("truncated header", len(data))
    magic, version, flags, s, width, nb, h = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptBlobError("bad magic", 0)
    if version != VERSION:
        raise CorruptBlobError(f"unsupported version {version}", 4)
    if flags & ~(FLAG_SYMMETRIC | FLAG_TAIL):
        raise CorruptBlobError(f"unknown flags 0x{flags:02x}", 5)
    symmetric = bool(flags & FLAG_SYMMETRIC)
    (n_sym,) = struct.unpack_from("<H", data, _HEADER.size)
    expect = 2 * s + 2 if symmetric else s + 2
    if n_sym != expect:
        raise CorruptBlobError(f"symbol count {n_sym} does not match s={s}", _HEADER.size)
    start = _HEADER.size + 2
    if len(data) < start + n_sym:
        raise CorruptBlobError("truncated code-length table", len(data))
    lengths = tuple(data[start : start + n_sym])
    if min(lengths) < 1 or sum(2.0 ** -n for n in lengths) > 1.0 + 1e-12:
        raise CorruptBlobError("invalid code-length table", start)
    return BlobHeader(version, symmetric, bool(flags & FLAG_TAIL), s, width, nb, h,
                      lengths, start + n_sym)


def _decode_body(data: bytes, hdr: BlobHeader, table: SymbolTable):
    """Yields per-bucket ``(norm, indices, negative, payload_bits)`` and the tail."""
    dec = _Decoder(table)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8)).tolist()
    nbits = len(bits)
    pos = 8 * hdr.body_offset
    width = hdr.bucket_size
    norms = np.zeros(hdr.bucket_count)
    idx = np.zeros((hdr.bucket_count, width), dtype=np.int32)
    neg = np.zeros((hdr.bucket_count, width), dtype=bool)
    sizes = np.zeros(hdr.bucket_count, dtype=np.int64)
    first, count, offset, symbols = dec.first, dec.count, dec.offset, dec.symbols
    max_len = dec.max_len
    signed = not hdr.symmetric
    for b in range(hdr.bucket_count):
        start = pos
        byte = pos // 8
        if byte + 4 > len(data):
            raise CorruptBlobError("truncated bucket norm", byte)
        (norm,) = struct.unpack_from("<f", data, byte)
        if not math.isfinite(norm) or norm < 0:
            raise CorruptBlobError("invalid bucket norm", byte)
        norms[b] = norm
        pos += NORM_BITS
        row = idx[b]
        nrow = neg[b]
        for i in range(width):
            code = 0
            n = 0
            while True:
                if pos >= nbits:
                    raise CorruptBlobError("truncated codeword", pos // 8)
                code = (code << 1) | bits[pos]
                pos += 1
                n += 1
                c = count.get(n)
                if c is not None and 0 <= code - first[n] < c:
                    sym = symbols[offset[n] + code - first[n]]
                    break
                if n >= max_len:
                    raise CorruptBlobError("unknown codeword", (pos - 1) // 8)
            row[i] = sym
            if signed and sym:
                if pos >= nbits:
                    raise CorruptBlobError("truncated sign bit", pos // 8)
                nrow[i] = bits[pos] == 1
                pos += 1
        sizes[b] = pos - start
        pad = (-pos) % 8
        if pad:
            if pos + pad > nbits or any(bits[pos : pos + pad]):
                raise CorruptBlobError("nonzero bucket padding", pos // 8)
            pos += pad
    byte = pos // 8
    tail = np.zeros(0)
    if hdr.has_tail:
        if byte + 4 > len(data):
            raise CorruptBlobError("truncated tail length", byte)
        (n_tail,) = struct.unpack_from("<I", data, byte)
        byte += 4
        if n_tail == 0 or (hdr.bucket_count and n_tail >= width):
            raise CorruptBlobError("invalid tail length", byte - 4)
        if byte + 8 * n_tail > len(data):
            raise CorruptBlobError("truncated tail", len(data))
        tail = np.frombuffer(data, dtype="<f8", count=n_tail, offset=byte).astype(float)
        byte += 8 * n_tail
    if byte != len(data):
        raise CorruptBlobError("trailing bytes after blob", byte)
    return norms, idx, neg, sizes, tail


def decode(blob, table: SymbolTable, levels: LevelSet) -> QuantizedGradient:
    """Inverse of ``encode``; norms come back rounded to float32."""
    data = blob.data if isinstance(blob, EncodedBlob) else bytes(blob)
    hdr = read_header(data)
    if hdr.level_hash != levels.digest():
        raise CorruptBlobError("level-set hash mismatch", 16)
    if hdr.s != levels.s or hdr.symmetric != levels.symmetric:
        raise CorruptBlobError("header does not match the level set", 6)
    if hdr.lengths != table.lengths:
        raise CorruptBlobError("code table differs from the receiver's table", _HEADER.size + 2)
    norms, idx, neg, _, tail = _decode_body(data, hdr, table)
    d = hdr.bucket_count * hdr.bucket_size + tail.size
    return QuantizedGradient(d, hdr.s, hdr.symmetric, norms, idx, neg, tail)


def inspect_blob(data: bytes) -> dict:
    """Header fields and per-bucket sizes, using the embedded code table."""
    hdr = read_header(data)
    table = SymbolTable.from_lengths(hdr.lengths)
    norms, idx, _, sizes, tail = _decode_body(data, hdr, table)
    return {
        "version": hdr.version,
        "symmetric": hdr.symmetric,
        "s": hdr.s,
        "bucket_size": hdr.bucket_size,
        "bucket_count": hdr.bucket_count,
        "level_hash": f"{hdr.level_hash:016x}",
        "code_lengths": list(hdr.lengths),
        "tail_len": int(tail.size),
        "total_bytes": len(data),
        "buckets": [
            {"norm": float(norms[b]), "bits": int(sizes[b]), "nonzero": int(np.count_nonzero(idx[b]))}
            for b in range(hdr.bucket_count)
        ],
    }


def wire_view(qg: QuantizedGradient) -> QuantizedGradient:
    """``qg`` as a receiver reconstructs it (norms rounded to float32)."""
    return QuantizedGradient(
        qg.d, qg.s, qg.symmetric, qg.norms.astype(np.float32).astype(float),
        qg.indices, qg.negative, qg.tail,
    )


# --- code-length bounds ----------------------------------------------------

def sparsity_bound(l1: float, d: int, q: NormKind) -> float:
    """Bound on the expected number of nonzero indices of a bucket."""
    q = NormKind.parse(q)
    root = d if q.is_inf else d ** (1.0 - 1.0 / q.q)
    first = 0.0 if q.is_inf else l1 ** (-q.q)
    return float(min(first + root / l1, d))


def expected_code_length_bound(levels: LevelSet, model, d: int, q=2.0, b: int = NORM_BITS) -> float:
    """Expected bits for one bucket of ``d`` coordinates given a model.

    Non-symmetric: ``b + n + d (H + 1)``, with ``n`` the sparsity bound on sign
    bits.  Symmetric grids send no sign bits: ``b + d (H + 1)``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    H = entropy_bits(symbol_probs(levels, model))
    if levels.symmetric:
        return float(b + d * (H + 1.0))
    return float(b + sparsity_bound(levels.positive[1], d, q) + d * (H + 1.0))


def coarse_code_length_bound(levels: LevelSet, d: int, q=2.0, b: int = NORM_BITS) -> float:
    """Model-free form: entropy replaced by ``log2`` of the alphabet size."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if levels.symmetric:
        return float(b + d * (math.log2(2 * levels.s + 2) + 1.0))
    return float(b + sparsity_bound(levels.positive[1], d, q) + d * (math.log2(levels.s + 2) + 1.0))

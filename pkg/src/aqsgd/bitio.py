"""MSB-first bit packing."""

from __future__ import annotations

import numpy as np


class BitStreamError(ValueError):
    """Read past the end of a bit stream."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BitWriter:
    def __init__(self):
        self._bytes = bytearray()
        self._acc = 0
        self._nacc = 0

    @property
    def bit_length(self) -> int:
        return 8 * len(self._bytes) + self._nacc

    def write(self, value: int, nbits: int):
        if nbits <= 0:
            return
        self._acc = (self._acc << nbits) | (int(value) & ((1 << nbits) - 1))
        self._nacc += nbits
        while self._nacc >= 8:
            self._nacc -= 8
            self._bytes.append((self._acc >> self._nacc) & 0xFF)
        self._acc &= (1 << self._nacc) - 1

    def write_bits(self, bits: np.ndarray):
        """Append a 0/1 array."""
        bits = np.asarray(bits, dtype=np.uint8)
        if not bits.size:
            return
        if self._nacc:
            head = min(8 - self._nacc, bits.size)
            for b in bits[:head]:
                self.write(int(b), 1)
            bits = bits[head:]
        whole = bits.size - bits.size % 8
        if whole:
            self._bytes += np.packbits(bits[:whole]).tobytes()
        for b in bits[whole:]:
            self.write(int(b), 1)

    def write_bytes(self, data: bytes):
        if self._nacc:
            raise ValueError("write_bytes requires byte alignment")
        self._bytes += data

    def align(self) -> int:
        """Zero-pad to the next byte boundary; returns the pad length."""
        pad = (-self._nacc) % 8
        self.write(0, pad)
        return pad

    def getvalue(self) -> bytes:
        if self._nacc:
            raise ValueError("stream not byte aligned")
        return bytes(self._bytes)


class BitReader:
    def __init__(self, data: bytes, pos_bits: int = 0):
        self._data = data
        self._bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
        self.pos = pos_bits

    @property
    def byte_offset(self) -> int:
        return self.pos // 8

    @property
    def total_bits(self) -> int:
        return self._bits.size

    def remaining(self) -> int:
        return self._bits.size - self.pos

    def read_bit(self) -> int:
        if self.pos >= self._bits.size:
            raise BitStreamError("unexpected end of stream", self.pos // 8)
        b = int(self._bits[self.pos])
        self.pos += 1
        return b

    def read(self, nbits: int) -> int:
        if self.pos + nbits > self._bits.size:
            raise BitStreamError("unexpected end of stream", self.pos // 8)
        v = 0
        for b in self._bits[self.pos : self.pos + nbits]:
            v = (v << 1) | int(b)
        self.pos += nbits
        return v

    def read_bytes(self, n: int) -> bytes:
        if self.pos % 8:
            raise ValueError("read_bytes requires byte alignment")
        start = self.pos // 8
        if start + n > len(self._data):
            raise BitStreamError("unexpected end of stream", start)
        self.pos += 8 * n
        return self._data[start : start + n]

    def align(self) -> int:
        """Skip to the next byte boundary; returns the skipped bits' value."""
        pad = (-self.pos) % 8
        return self.read(pad) if pad else 0

    @property
    def bits(self) -> np.ndarray:
        return self._bits

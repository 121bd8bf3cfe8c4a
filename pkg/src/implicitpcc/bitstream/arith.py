"""Adaptive binary arithmetic coding of integer sequences and cube maps.

The coder is a byte-oriented range coder with a 32-bit range, carry
propagation through a one-byte cache and 12-bit adaptive probabilities.
Integers are binarized as: significance flag, sign flag, then the
magnitude minus one in order-0 Exp-Golomb form (unary prefix, binary
suffix). Each bin position has its own adaptive context.
"""

from __future__ import annotations

import numpy as np

PROB_BITS = 12
PROB_ONE = 1 << PROB_BITS
ADAPT_SHIFT = 5
TOP = 1 << 24
MASK32 = 0xFFFFFFFF
SENTINEL = 0xA5
BUCKETS = 17  # Exp-Golomb bin contexts, indices >= 16 share the last one


class BitstreamExhaustedError(ValueError):
    """Raised when a decoder needs more bytes than the payload holds."""


class ModelDesyncError(ValueError):
    """Raised when the trailing sentinel does not decode as written."""


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low << 8) & MASK32

    def encode(self, probs: list, ctx: int, bit: int):
        p = probs[ctx]
        bound = (self.range >> PROB_BITS) * p
        if bit:
            self.low += bound
            self.range -= bound
            probs[ctx] = p - (p >> ADAPT_SHIFT)
        else:
            self.range = bound
            probs[ctx] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_bypass(self, bit: int):
        self.range >>= 1
        if bit:
            self.low += self.range
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        for i in range(8):
            self.encode_bypass((SENTINEL >> (7 - i)) & 1)
        for _ in range(5):
            self._shift_low()
        # the first byte out of this scheme is always zero
        return bytes(self.out[1:])


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise BitstreamExhaustedError(
                f"payload exhausted after {len(self.data)} bytes")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def decode(self, probs: list, ctx: int) -> int:
        p = probs[ctx]
        bound = (self.range >> PROB_BITS) * p
        if self.code < bound:
            self.range = bound
            probs[ctx] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
            bit = 0
        else:
            self.code -= bound
            self.range -= bound
            probs[ctx] = p - (p >> ADAPT_SHIFT)
            bit = 1
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next()) & MASK32
        return bit

    def decode_bypass(self) -> int:
        self.range >>= 1
        if self.code >= self.range:
            self.code -= self.range
            bit = 1
        else:
            bit = 0
        while self.range < TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next()) & MASK32
        return bit

    def check_sentinel(self):
        value = 0
        for _ in range(8):
            value = (value << 1) | self.decode_bypass()
        if value != SENTINEL:
            raise ModelDesyncError(
                f"sentinel mismatch: expected {SENTINEL:#04x}, got {value:#04x}")


class IndexModel:
    """Context set for integer coding.

    Significance is conditioned on whether the previous value was zero.
    """

    def __init__(self):
        half = PROB_ONE // 2
        self.sig = [half, half]
        self.sign = [half]
        self.prefix = [half] * BUCKETS
        self.suffix = [half] * BUCKETS


def encode_indices(indices) -> bytes:
    """Losslessly code a sequence of signed integers (|v| < 2**31)."""
    values = np.asarray(indices, dtype=np.int64).ravel().tolist()
    enc = RangeEncoder()
    model = IndexModel()
    sig, sign, prefix, suffix = model.sig, model.sign, model.prefix, model.suffix
    prev_zero = 1
    for v in values:
        if v == 0:
            enc.encode(sig, prev_zero, 0)
            prev_zero = 1
            continue
        enc.encode(sig, prev_zero, 1)
        prev_zero = 0
        enc.encode(sign, 0, 1 if v < 0 else 0)
        u = (v if v > 0 else -v) - 1
        # order-0 Exp-Golomb: q ones, a zero, then q low bits of u + 1
        q = (u + 1).bit_length() - 1
        for i in range(q):
            enc.encode(prefix, i if i < 16 else 16, 1)
        enc.encode(prefix, q if q < 16 else 16, 0)
        rest = u + 1 - (1 << q)
        for i in range(q - 1, -1, -1):
            enc.encode(suffix, i if i < 16 else 16, (rest >> i) & 1)
    return enc.finish()


def decode_indices(data: bytes, count: int) -> np.ndarray:
    """Inverse of :func:`encode_indices` for ``count`` values."""
    dec = RangeDecoder(data)
    model = IndexModel()
    sig, sign, prefix, suffix = model.sig, model.sign, model.prefix, model.suffix
    out = [0] * count
    prev_zero = 1
    for n in range(count):
        if not dec.decode(sig, prev_zero):
            prev_zero = 1
            continue
        prev_zero = 0
        negative = dec.decode(sign, 0)
        q = 0
        while dec.decode(prefix, q if q < 16 else 16):
            q += 1
            if q > 32:
                raise ModelDesyncError("Exp-Golomb prefix too long")
        rest = 0
        for i in range(q - 1, -1, -1):
            rest |= dec.decode(suffix, i if i < 16 else 16) << i
        mag = (1 << q) + rest
        out[n] = -mag if negative else mag
    dec.check_sentinel()
    return np.asarray(out, dtype=np.int64)


# --------------------------------------------------------------------------
# cube occupancy maps

def morton_order(bits: int) -> np.ndarray:
    """Cube coordinates (x, y, z) listed in Morton (Z-order) sequence."""
    codes = np.arange(1 << (3 * bits), dtype=np.int64)
    xyz = np.zeros((len(codes), 3), dtype=np.int64)
    for b in range(bits):
        for axis in range(3):
            # x takes the most significant bit of each triple
            xyz[:, axis] |= ((codes >> (3 * b + 2 - axis)) & 1) << b
    return xyz


def encode_cube_map(cubes: np.ndarray, cube_bits: int) -> bytes:
    """Code the occupancy bitmap of ``2**(3M)`` cubes in Morton order.

    Each bit's context is formed from the already-coded neighbors at
    ``x-1`` and ``y-1``, both of which precede it in Morton order.
    """
    side = 1 << cube_bits
    occ = np.zeros((side, side, side), dtype=np.int64)
    c = np.asarray(cubes, dtype=np.int64).reshape(-1, 3)
    if len(c):
        occ[c[:, 0], c[:, 1], c[:, 2]] = 1
    coords = morton_order(cube_bits)
    bits = occ[coords[:, 0], coords[:, 1], coords[:, 2]].tolist()
    ctxs = _contexts(occ, coords)
    enc = RangeEncoder()
    probs = [PROB_ONE // 2] * 4
    for bit, ctx in zip(bits, ctxs):
        enc.encode(probs, ctx, bit)
    return enc.finish()


def _contexts(occ, coords):
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    left = np.where(x > 0, occ[np.maximum(x - 1, 0), y, z], 0)
    below = np.where(y > 0, occ[x, np.maximum(y - 1, 0), z], 0)
    return (left + 2 * below).tolist()


def decode_cube_map(data: bytes, cube_bits: int) -> np.ndarray:
    """Inverse of :func:`encode_cube_map`; cubes sorted lexicographically."""
    side = 1 << cube_bits
    occ = np.zeros((side, side, side), dtype=np.int64)
    coords = morton_order(cube_bits).tolist()
    dec = RangeDecoder(data)
    probs = [PROB_ONE // 2] * 4
    for x, y, z in coords:
        ctx = (occ[x - 1, y, z] if x > 0 else 0) + 2 * (
            occ[x, y - 1, z] if y > 0 else 0)
        occ[x, y, z] = dec.decode(probs, int(ctx))
    dec.check_sentinel()
    return np.argwhere(occ).astype(np.int64)

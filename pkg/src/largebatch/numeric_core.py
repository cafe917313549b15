"""Numeric substrate: float64 tensors, a counter-based RNG and a binary16 codec.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
add the checks the rest of the package relies on (shape agreement, explicit
division-by-zero errors, finiteness).
"""

from __future__ import annotations

import numpy as np

HALF_MAX = 65504.0

_UNARY = {"square": np.square, "sqrt": np.sqrt}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide}


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    """Raised when a value that must be finite is not.

    ``index`` is the flat index of the first offending element, when known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a float64 array (copying only when needed)."""
    return np.asarray(x, dtype=np.float64)


def check_same_shape(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {np.shape(a)}")


def check_finite(x, what="value"):
    x = np.asarray(x)
    bad = ~np.isfinite(x)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise NonFiniteError(f"non-finite {what} at flat index {idx}", index=idx)


def elementwise(op: str, a, b=None) -> np.ndarray:
    """Apply ``op`` (add, sub, mul, div, square, sqrt) elementwise.

    Inputs are never modified. Division by an exact zero raises
    ``ZeroDivisionError`` instead of returning infinity.
    """
    a = as_tensor(a)
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} is unary")
        if op == "sqrt" and (a < 0).any():
            raise ValueError("sqrt of negative value")
        return _UNARY[op](a)
    if op not in _BINARY:
        raise ValueError(f"unknown op {op!r}")
    if b is None:
        raise TypeError(f"{op} needs two operands")
    b = as_tensor(b)
    check_same_shape(a, b)
    if op == "div" and (b == 0).any():
        idx = int(np.flatnonzero(b == 0)[0])
        raise ZeroDivisionError(f"division by zero at flat index {idx}")
    return _BINARY[op](a, b)


# -- binary16 ---------------------------------------------------------------


def encode_binary16(x) -> tuple[np.ndarray, int]:
    """Encode an array into binary16 bit patterns (uint16).

    Round-to-nearest-even; magnitudes beyond the largest finite half value
    saturate to +/-65504. Returns ``(patterns, n_saturated)``.
    """
    x = as_tensor(x)
    check_finite(x, "binary16 input")
    over = np.abs(x) > HALF_MAX
    n_sat = int(over.sum())
    if n_sat:
        x = np.clip(x, -HALF_MAX, HALF_MAX)
    return x.astype(np.float16).view(np.uint16), n_sat


def decode_binary16(p) -> np.ndarray:
    """Widen binary16 bit patterns to float64 exactly. NaN/inf patterns raise."""
    p = np.asarray(p, dtype=np.uint16)
    exp_all_ones = (p & 0x7C00) == 0x7C00
    if exp_all_ones.any():
        idx = int(np.flatnonzero(exp_all_ones)[0])
        raise NonFiniteError(f"non-finite binary16 pattern at flat index {idx}", index=idx)
    return p.view(np.float16).astype(np.float64)


def to_binary16(x: float) -> int:
    """Scalar form of :func:`encode_binary16`."""
    if not np.isfinite(x):
        raise NonFiniteError(f"cannot encode {x!r} as binary16")
    return int(encode_binary16(np.array([x]))[0][0])


def from_binary16(p: int) -> float:
    if not 0 <= p <= 0xFFFF:
        raise ValueError(f"not a 16-bit pattern: {p}")
    return float(decode_binary16(np.array([p], dtype=np.uint16))[0])


def quantize_binary16(x) -> np.ndarray:
    """Round-trip through binary16 (what a receiver sees on the wire)."""
    return decode_binary16(encode_binary16(x)[0])


# -- random numbers ---------------------------------------------------------


class Rng:
    """Seeded counter-based generator (Philox-4x64).

    ``Rng(seed, *stream)`` derives an independent stream from the seed and any
    number of integer stream identifiers, e.g. ``Rng(seed, worker_id, epoch)``.
    The same identifiers always give the same stream on any platform.
    An instance must not be shared between threads.
    """

    def __init__(self, seed: int, *stream: int):
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = seed
        self.stream = tuple(int(s) for s in stream)
        ss = np.random.SeedSequence([seed, *self.stream])
        self._gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, *stream: int) -> "Rng":
        return Rng(self.seed, *self.stream, *stream)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape, mean=0.0, stddev=1.0) -> np.ndarray:
        return rand_normal(self, shape, mean, stddev)

    def uniform(self, shape, low=0.0, high=1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def rand_normal(rng: Rng, shape, mean=0.0, stddev=1.0) -> np.ndarray:
    if stddev < 0:
        raise ValueError("stddev must be >= 0")
    z = rng.generator.standard_normal(size=shape)
    return mean + stddev * z

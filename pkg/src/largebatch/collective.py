"""Simulated synchronous collectives and an analytic ring all-reduce cost model.

All workers live in one process. ``full64`` reductions add payloads in worker
order. ``half16`` reductions run a ring reduce-scatter / all-gather where each
hop serialises its chunk into the binary16 wire format; the receiver widens and
accumulates in float64.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numeric_core import (
    ShapeError,
    as_tensor,
    check_finite,
    decode_binary16,
    encode_binary16,
)

WIRE_MAGIC = 0x41524443
WIRE_VERSION = 1
_HEADER = struct.Struct("<IHHQ")


class CommPrecision(enum.IntEnum):
    FULL64 = 0
    HALF16 = 1

    @classmethod
    def parse(cls, value) -> "CommPrecision":
        if isinstance(value, cls):
            return value
        try:
            return {"full64": cls.FULL64, "half16": cls.HALF16}[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown precision {value!r} (expected full64 or half16)") from None

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def bytes_per_element(self) -> int:
        return 8 if self is CommPrecision.FULL64 else 2


class SaturationWarning(RuntimeWarning):
    pass


@dataclass
class CommStats:
    """Counters accumulated across all-reduce calls."""

    calls: int = 0
    hops: int = 0
    bytes_sent: int = 0
    saturated: int = 0


# -- wire format ------------------------------------------------------------


def encode_chunk(values, precision) -> tuple[bytes, int]:
    """Serialise a 1-D chunk. Returns ``(frame, n_saturated)``."""
    precision = CommPrecision.parse(precision)
    values = as_tensor(values).ravel()
    header = _HEADER.pack(WIRE_MAGIC, WIRE_VERSION, int(precision), values.size)
    if precision is CommPrecision.FULL64:
        check_finite(values, "payload")
        return header + values.astype("<f8").tobytes(), 0
    patterns, n_sat = encode_binary16(values)
    return header + patterns.astype("<u2").tobytes(), n_sat


def decode_chunk(frame: bytes) -> tuple[np.ndarray, CommPrecision]:
    if len(frame) < _HEADER.size:
        raise ValueError("truncated frame header")
    magic, version, prec, count = _HEADER.unpack_from(frame)
    if magic != WIRE_MAGIC:
        raise ValueError(f"bad magic 0x{magic:08x}")
    if version != WIRE_VERSION:
        raise ValueError(f"unsupported wire version {version}")
    precision = CommPrecision(prec)
    body = memoryview(frame)[_HEADER.size:]
    if len(body) != count * precision.bytes_per_element:
        raise ValueError("payload length does not match element count")
    if precision is CommPrecision.FULL64:
        return np.frombuffer(body, dtype="<f8").astype(np.float64), precision
    return decode_binary16(np.frombuffer(body, dtype="<u2")), precision


# -- all-reduce -------------------------------------------------------------


def _send(chunk, precision, stats):
    frame, n_sat = encode_chunk(chunk, precision)
    if stats is not None:
        stats.hops += 1
        stats.bytes_sent += len(frame)
        stats.saturated += n_sat
    return decode_chunk(frame)[0], n_sat


def ring_all_reduce(payloads, precision=CommPrecision.HALF16, stats=None):
    """Ring reduce-scatter + all-gather over flattened payloads.

    Returns the list of per-worker results (identical by construction).
    """
    precision = CommPrecision.parse(precision)
    W = len(payloads)
    flat = [as_tensor(p).ravel().copy() for p in payloads]
    n = flat[0].size
    bounds = np.linspace(0, n, W + 1).astype(int)
    chunks = [[f[bounds[c]:bounds[c + 1]] for c in range(W)] for f in flat]
    saturated = 0

    # reduce-scatter: chunk c leaves worker c and ends fully reduced at worker c-1
    for s in range(W - 1):
        for w in range(W):
            c = (w - s) % W
            dst = (w + 1) % W
            recv, k = _send(chunks[w][c], precision, stats)
            saturated += k
            chunks[dst][c] = chunks[dst][c] + recv
    # the owner keeps the wire-format value so every worker holds identical bits
    for c in range(W):
        owner = (c + W - 1) % W
        if W > 1 and precision is CommPrecision.HALF16:
            q, k = _send(chunks[owner][c], precision, None)
            saturated += k
            if stats is not None:
                stats.saturated += k
            chunks[owner][c] = q
    # all-gather
    for s in range(W - 1):
        for w in range(W):
            c = (w + 1 - s) % W
            dst = (w + 1) % W
            recv, k = _send(chunks[w][c], precision, stats)
            saturated += k
            chunks[dst][c] = recv
    if saturated:
        warnings.warn(
            f"{saturated} elements saturated to +/-65504 during binary16 all-reduce",
            SaturationWarning,
            stacklevel=3,
        )
    shape = np.shape(payloads[0])
    return [np.concatenate(ch).reshape(shape) for ch in chunks]


def all_reduce(payloads, op="sum", precision=CommPrecision.FULL64, stats=None) -> np.ndarray:
    """Combine equal-shaped payloads from all workers.

    ``full64`` is the ordered sum by worker index. ``half16`` simulates the
    ring with binary16 on the wire. ``average`` divides after summation.
    """
    precision = CommPrecision.parse(precision)
    if op not in ("sum", "average"):
        raise ValueError(f"unknown op {op!r}")
    if len(payloads) < 1:
        raise ValueError("need at least one payload")
    arrays = [as_tensor(p) for p in payloads]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError(f"payload shape mismatch: {shape} vs {a.shape}")
    for a in arrays:
        check_finite(a, "payload")
    W = len(arrays)

    if stats is not None:
        stats.calls += 1
    if precision is CommPrecision.FULL64 or W == 1:
        total = arrays[0].copy()
        for a in arrays[1:]:
            total = total + a
    else:
        total = ring_all_reduce(arrays, precision, stats)[0]
    if op == "average":
        total = total / W
    return total


def rel_l2_error(approx, exact) -> float:
    approx = as_tensor(approx)
    exact = as_tensor(exact)
    denom = np.linalg.norm(exact)
    diff = np.linalg.norm(approx - exact)
    return float(diff / denom) if denom > 0 else float(diff)


# -- cost model -------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """alpha: seconds per hop; beta: seconds per byte; gamma: compute seconds per iteration."""

    alpha_latency: float = 5e-6
    beta_bandwidth: float = 1.0 / 6.8e9
    gamma_compute: float = 0.1

    def __post_init__(self):
        if min(self.alpha_latency, self.beta_bandwidth, self.gamma_compute) < 0:
            raise ValueError("cost model parameters must be >= 0")


def ring_time(payload_bytes, workers: int, model: CostModel) -> float:
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1:
        return 0.0
    hops = 2 * (workers - 1)
    return hops * model.alpha_latency + hops / workers * payload_bytes * model.beta_bandwidth


def iteration_time(payload_bytes, workers: int, model: CostModel) -> float:
    return model.gamma_compute + ring_time(payload_bytes, workers, model)


def scaling_efficiency(workers: int, model: CostModel, payload_bytes) -> float:
    if model.gamma_compute <= 0:
        raise ValueError("gamma_compute must be > 0")
    return model.gamma_compute / iteration_time(payload_bytes, workers, model)


def _design_row(workers, payload_bytes):
    hops = 2.0 * (workers - 1)
    return [hops, hops / workers * payload_bytes, 1.0]


@dataclass
class CostFit:
    model: CostModel
    residuals: np.ndarray = field(repr=False)


def fit_cost_model(workers, seconds, payload_bytes) -> CostFit:
    """Least-squares fit of iteration time ``gamma + ring_time(payload, W)``.

    Needs at least three distinct worker counts; otherwise the system is
    underdetermined and ``ValueError`` is raised.
    """
    workers = np.asarray(workers, dtype=np.int64)
    seconds = as_tensor(seconds)
    if workers.shape != seconds.shape or workers.ndim != 1:
        raise ValueError("workers and seconds must be equal-length 1-D sequences")
    if len(np.unique(workers)) < 3:
        raise ValueError("need measurements for at least 3 distinct worker counts")
    if (workers < 1).any():
        raise ValueError("worker counts must be >= 1")
    A = np.array([_design_row(w, payload_bytes) for w in workers], dtype=np.float64)
    # column scaling keeps the latency and bandwidth columns comparable
    scale = np.abs(A).max(axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(A / scale, seconds, rcond=None)
    coef = coef / scale
    alpha, beta, gamma = (max(0.0, float(c)) for c in coef)
    model = CostModel(alpha_latency=alpha, beta_bandwidth=beta, gamma_compute=gamma)
    pred = np.array([iteration_time(payload_bytes, int(w), model) for w in workers])
    return CostFit(model=model, residuals=seconds - pred)


def solve_for_efficiencies(targets, gamma_compute, payload_bytes) -> CostModel:
    """Find (alpha, beta) giving exact efficiencies at two worker counts.

    ``targets`` maps worker count to efficiency relative to one worker. Raises
    ``ValueError`` if the only solution needs a negative parameter.
    """
    if len(targets) != 2:
        raise ValueError("need exactly two (workers, efficiency) targets")
    rows, rhs = [], []
    for w, eff in sorted(targets.items()):
        if not 0 < eff <= 1:
            raise ValueError("efficiencies must lie in (0, 1]")
        hops = 2.0 * (w - 1)
        rows.append([hops, hops / w * payload_bytes])
        rhs.append(gamma_compute * (1.0 / eff - 1.0))
    alpha, beta = np.linalg.solve(np.array(rows), np.array(rhs))
    if alpha < 0 or beta < 0:
        raise ValueError(f"no nonnegative ring model fits {targets}")
    return CostModel(float(alpha), float(beta), float(gamma_compute))

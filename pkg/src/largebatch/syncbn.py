"""Batch normalization that keeps no running averages.

Training uses the current minibatch's statistics and remembers them as the
layer's *last* statistics. Before validation, every worker's last statistics
are averaged with an all-reduce; evaluation then normalizes with those synced
values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .collective import CommPrecision, all_reduce
from .numeric_core import ShapeError, as_tensor

DEFAULT_EPS_BN = 1e-5


class SyncError(RuntimeError):
    pass


@dataclass
class BnLayerState:
    gamma: np.ndarray
    beta: np.ndarray
    last_mean: np.ndarray | None = None
    last_var: np.ndarray | None = None
    synced_mean: np.ndarray | None = None
    synced_var: np.ndarray | None = None

    @classmethod
    def init(cls, features: int) -> "BnLayerState":
        return cls(gamma=np.ones(features), beta=np.zeros(features))

    @property
    def is_synced(self) -> bool:
        return self.synced_mean is not None and self.synced_var is not None

    def invalidate(self):
        self.synced_mean = None
        self.synced_var = None


def _check_input(x, state):
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != state.gamma.shape[0]:
        raise ShapeError(f"expected [batch, {state.gamma.shape[0]}], got {x.shape}")
    return x


def batch_stats(x):
    """Per-feature mean and biased variance (divisor = batch)."""
    mean = x.mean(axis=0)
    var = ((x - mean) ** 2).mean(axis=0)
    return mean, var


def _normalize(x, mean, var, state, eps_bn):
    return state.gamma * (x - mean) / np.sqrt(var + eps_bn) + state.beta


def bn_forward_train(x, state: BnLayerState, eps_bn=DEFAULT_EPS_BN) -> np.ndarray:
    """Normalize with this batch's statistics and record them on ``state``.

    Any previously synced statistics are invalidated.
    """
    x = _check_input(x, state)
    if x.shape[0] < 2:
        raise ValueError("training-mode batch norm needs batch >= 2")
    if eps_bn <= 0:
        raise ValueError("eps_bn must be > 0")
    mean, var = batch_stats(x)
    state.last_mean, state.last_var = mean, var
    state.invalidate()
    return _normalize(x, mean, var, state, eps_bn)


def bn_forward_eval(x, state: BnLayerState, eps_bn=DEFAULT_EPS_BN) -> np.ndarray:
    x = _check_input(x, state)
    if not state.is_synced:
        raise SyncError("validation before sync: no synced batch-norm statistics")
    return _normalize(x, state.synced_mean, state.synced_var, state, eps_bn)


def sync_statistics(states, precision=CommPrecision.FULL64, pooled=False, stats=None):
    """Average each worker's last-minibatch statistics into ``synced_*``.

    ``states`` holds one layer's state per worker. With ``pooled=True`` the
    variance also includes the spread of worker means (equal batch sizes
    assumed); by default it is the plain average of the worker variances.
    """
    for w, st in enumerate(states):
        if st.last_mean is None or st.last_var is None:
            raise SyncError(f"worker {w} has no last-minibatch statistics")
    mean = all_reduce([st.last_mean for st in states], "average", precision, stats)
    var = all_reduce([st.last_var for st in states], "average", precision, stats)
    if pooled:
        sq = all_reduce([st.last_mean**2 for st in states], "average", precision, stats)
        var = var + np.maximum(sq - mean**2, 0.0)
    var = np.maximum(var, 0.0)
    for st in states:
        st.synced_mean = mean.copy()
        st.synced_var = var.copy()
    return states


def bn_backward(grad_out, x, state: BnLayerState, eps_bn=DEFAULT_EPS_BN):
    """Gradients of :func:`bn_forward_train` w.r.t. input, gamma and beta."""
    x = _check_input(x, state)
    grad_out = as_tensor(grad_out)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out {grad_out.shape} does not match input {x.shape}")
    n = x.shape[0]
    mean, var = batch_stats(x)
    inv_std = 1.0 / np.sqrt(var + eps_bn)
    xhat = (x - mean) * inv_std
    grad_beta = grad_out.sum(axis=0)
    grad_gamma = (grad_out * xhat).sum(axis=0)
    dxhat = grad_out * state.gamma
    grad_x = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return grad_x, grad_gamma, grad_beta

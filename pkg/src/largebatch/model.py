"""Small ReLU multilayer perceptron with optional batch norm, hand-written backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric_core import NonFiniteError, Rng, rand_normal
from .syncbn import BnLayerState, bn_backward, bn_forward_eval, bn_forward_train


OUTPUT_INIT_STD = 0.01


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple
    use_batchnorm: tuple | bool = True
    activation: str = "relu"
    init_scale: float = 1.0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if sizes[-1] < 2:
            raise ValueError("need at least 2 classes")
        if isinstance(self.use_batchnorm, bool):
            object.__setattr__(self, "use_batchnorm", (self.use_batchnorm,) * self.n_hidden)
        if len(self.use_batchnorm) != self.n_hidden:
            raise ValueError("use_batchnorm needs one flag per hidden layer")
        if self.activation != "relu":
            raise ValueError("only relu is supported")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be > 0")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def classes(self) -> int:
        return self.layer_sizes[-1]


def init_params(spec: ModelSpec, rng: Rng) -> dict:
    """He-normal hidden weights, near-zero output weights, zero biases, unit BN scale.

    All weights are multiplied by ``init_scale``. The small output layer makes
    the untrained network predict close to uniformly.
    """
    params = {}
    sizes = spec.layer_sizes
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        std = OUTPUT_INIT_STD if i == spec.n_hidden else np.sqrt(2.0 / fan_in)
        std *= spec.init_scale
        params[f"fc{i}.weight"] = rand_normal(rng, (fan_in, fan_out), 0.0, std)
        params[f"fc{i}.bias"] = np.zeros(fan_out)
        if i < spec.n_hidden and spec.use_batchnorm[i]:
            params[f"bn{i}.gamma"] = np.ones(fan_out)
            params[f"bn{i}.beta"] = np.zeros(fan_out)
    return params


def init_bn_states(spec: ModelSpec) -> dict:
    return {
        i: BnLayerState.init(spec.layer_sizes[i + 1])
        for i in range(spec.n_hidden)
        if spec.use_batchnorm[i]
    }


def _check_layer(a, name):
    if not np.isfinite(a).all():
        raise NonFiniteError(f"non-finite activations in layer {name}")


def forward(spec, params, bn_states, x, train=True, eps_bn=1e-5):
    """Return ``(logits, cache)``. Train mode records BN batch statistics."""
    cache = {"x": x}
    h = x
    for i in range(spec.n_hidden):
        z = h @ params[f"fc{i}.weight"] + params[f"fc{i}.bias"]
        cache[f"z{i}"] = z
        if i in bn_states:
            st = bn_states[i]
            st.gamma, st.beta = params[f"bn{i}.gamma"], params[f"bn{i}.beta"]
            z = bn_forward_train(z, st, eps_bn) if train else bn_forward_eval(z, st, eps_bn)
        cache[f"u{i}"] = z
        h = np.maximum(z, 0.0)
        _check_layer(h, f"fc{i}")
        cache[f"h{i}"] = h
    L = spec.n_hidden
    logits = h @ params[f"fc{L}.weight"] + params[f"fc{L}.bias"]
    _check_layer(logits, f"fc{L}")
    return logits, cache


def cross_entropy(logits, y):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    n = len(y)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - log_z
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return float(loss), grad / n


def backward(spec, params, bn_states, cache, dlogits, eps_bn=1e-5) -> dict:
    grads = {}
    L = spec.n_hidden
    h = cache[f"h{L - 1}"]
    grads[f"fc{L}.weight"] = h.T @ dlogits
    grads[f"fc{L}.bias"] = dlogits.sum(axis=0)
    dh = dlogits @ params[f"fc{L}.weight"].T
    for i in reversed(range(L)):
        du = dh * (cache[f"u{i}"] > 0)
        if i in bn_states:
            dz, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = bn_backward(
                du, cache[f"z{i}"], bn_states[i], eps_bn
            )
        else:
            dz = du
        h_in = cache["x"] if i == 0 else cache[f"h{i - 1}"]
        grads[f"fc{i}.weight"] = h_in.T @ dz
        grads[f"fc{i}.bias"] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ params[f"fc{i}.weight"].T
    return {name: grads[name] for name in params}


def loss_and_grads(spec, params, bn_states, x, y, eps_bn=1e-5):
    logits, cache = forward(spec, params, bn_states, x, train=True, eps_bn=eps_bn)
    loss, dlogits = cross_entropy(logits, y)
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss at output layer")
    return loss, backward(spec, params, bn_states, cache, dlogits, eps_bn)


def predict(spec, params, bn_states, x, eps_bn=1e-5):
    logits, _ = forward(spec, params, bn_states, x, train=False, eps_bn=eps_bn)
    return logits

"""Hybrid momentum-SGD / RMSprop update with a smooth RMSprop-to-SGD warm-up.

The update for one parameter tensor is::

    m     <- mu2 * m + (1 - mu2) * g**2
    delta <- mu1 * delta - (alpha_sgd + alpha_rmsprop / (sqrt(m) + eps)) * g
    theta <- theta + eta * delta

``delta`` never carries the learning rate, so changing ``eta`` between steps
does not rescale the accumulated momentum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .numeric_core import as_tensor, check_finite, check_same_shape


@dataclass(frozen=True)
class OptimizerHyper:
    mu1: float = 0.9
    mu2: float = 0.99
    epsilon: float = 1e-8
    eta_rmsprop: float = 0.0003
    beta_center: float = 10.0
    beta_period: float = 5.0

    def __post_init__(self):
        if not 0 <= self.mu1 < 1:
            raise ValueError("mu1 must lie in [0, 1)")
        if not 0 <= self.mu2 < 1:
            raise ValueError("mu2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.eta_rmsprop <= 0:
            raise ValueError("eta_rmsprop must be > 0")
        if self.beta_period <= 0:
            raise ValueError("beta_period must be > 0")

    def scaled(self, factor: float) -> "OptimizerHyper":
        """Stretch the transition window by ``factor`` (for shortened runs)."""
        return replace(
            self, beta_center=self.beta_center * factor, beta_period=self.beta_period * factor
        )


@dataclass
class OptimizerState:
    m: np.ndarray
    delta: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, theta) -> "OptimizerState":
        theta = as_tensor(theta)
        return cls(m=np.zeros_like(theta), delta=np.zeros_like(theta), t=0)


@dataclass(frozen=True)
class BlendCoefficients:
    alpha_sgd: float
    alpha_rmsprop: float
    eta: float

    def __post_init__(self):
        if not 0.0 <= self.alpha_sgd <= 1.0:
            raise ValueError(f"alpha_sgd={self.alpha_sgd} outside [0, 1]")
        if self.alpha_rmsprop < 0:
            raise ValueError("alpha_rmsprop must be >= 0")


def alpha_sgd_at(epoch: float, beta_center: float = 10.0, beta_period: float = 5.0) -> float:
    """SGD share of the update at a (fractional) epoch.

    Exponential rise to 1/2 at ``beta_center``, then linear with slope
    ``1/beta_period`` up to 1 at ``beta_center + beta_period / 2``, then flat.
    The slope matches the derivative of the exponential branch at the
    junction, so the curve is C1 there.
    """
    if epoch < 0:
        raise ValueError(f"negative epoch {epoch}")
    if beta_period <= 0:
        raise ValueError("beta_period must be > 0")
    x = epoch - beta_center
    if x < 0:
        return 0.5 * math.exp(2.0 * x / beta_period)
    if x < 0.5 * beta_period:
        return min(1.0, 0.5 + x / beta_period)
    return 1.0


def blend_at(epoch: float, eta_sgd: float, hyper: OptimizerHyper) -> BlendCoefficients:
    if eta_sgd <= 0:
        raise ValueError(f"eta_sgd must be > 0, got {eta_sgd}")
    a = alpha_sgd_at(epoch, hyper.beta_center, hyper.beta_period)
    return BlendCoefficients(
        alpha_sgd=a, alpha_rmsprop=(1.0 - a) * hyper.eta_rmsprop / eta_sgd, eta=eta_sgd
    )


def step(theta, g, state: OptimizerState, blend: BlendCoefficients, hyper: OptimizerHyper):
    """One hybrid update. Returns ``(theta_new, state_new)``; inputs are untouched."""
    theta = as_tensor(theta)
    g = as_tensor(g)
    check_same_shape(theta, g, state.m, state.delta)
    check_finite(g, "gradient")

    m = hyper.mu2 * state.m + (1.0 - hyper.mu2) * (g * g)
    coeff = blend.alpha_sgd + blend.alpha_rmsprop / (np.sqrt(m) + hyper.epsilon)
    delta = hyper.mu1 * state.delta - coeff * g
    theta_new = theta + blend.eta * delta
    return theta_new, OptimizerState(m=m, delta=delta, t=state.t + 1)


@dataclass
class ParamOptimizer:
    """Keeps one :class:`OptimizerState` per named parameter."""

    hyper: OptimizerHyper = field(default_factory=OptimizerHyper)
    states: dict = field(default_factory=dict)

    def apply(self, params: dict, grads: dict, blend: BlendCoefficients) -> dict:
        out = {}
        for name, theta in params.items():
            st = self.states.get(name)
            if st is None:
                st = OptimizerState.zeros_like(theta)
            out[name], self.states[name] = step(theta, grads[name], st, blend, self.hyper)
        return out

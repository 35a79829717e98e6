"""SGD with momentum/weight decay, beta-LASSO, and cosine annealing.

beta-LASSO takes an l1-subgradient step and then hard-thresholds: an element
is set to exactly zero when its magnitude falls below ``beta * lambda``.
The penalty coefficient is looked up per parameter group; parameters tagged
``norm_bias`` are never penalized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import CONV_LIKE, FC_LIKE, NORM_BIAS

SGD = "sgd"
BETA_LASSO = "beta-lasso"


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimizerConfig:
    eta0: float = 0.1
    lambda_by_group: dict = field(default_factory=lambda: {CONV_LIKE: 0.0, FC_LIKE: 0.0})
    beta: float = 50.0
    momentum: float = 0.0
    weight_decay: float = 0.0
    total_steps: int = 1
    algorithm: str = SGD

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algorithm not in (SGD, BETA_LASSO):
            raise ValueError(f"unknown optimizer {self.algorithm!r}")
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if any(v < 0 for v in self.lambda_by_group.values()):
            raise ValueError("l1 coefficients must be >= 0")
        if self.algorithm == BETA_LASSO and (self.momentum or self.weight_decay):
            raise ValueError("beta-lasso runs without momentum and weight decay")

    def lam(self, group):
        if group == NORM_BIAS:
            return 0.0
        return float(self.lambda_by_group.get(group, 0.0))


@dataclass
class OptimizerState:
    step: int = 0
    velocity: dict = field(default_factory=dict)


def cosine_lr(t, tau, eta0):
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if not 0 <= t <= tau:
        raise ValueError(f"step {t} outside [0, {tau}]")
    return eta0 * (1.0 + math.cos(math.pi * t / tau)) / 2.0


def _check_finite(p):
    if not np.all(np.isfinite(p.grad)):
        raise NonFiniteGradient(f"non-finite gradient in {p.name}")


def beta_lasso_step(params, config: OptimizerConfig, state: OptimizerState, lr):
    """One beta-LASSO update of every parameter in ``params`` (in place)."""
    for p in params:
        _check_finite(p)
    for p in params:
        lam = config.lam(p.group)
        theta = p.value
        if lam == 0.0:
            theta -= lr * p.grad
            continue
        theta -= lr * (p.grad + lam * np.sign(theta))
        theta[np.abs(theta) < config.beta * lam] = 0
    return params


def sgd_step(params, config: OptimizerConfig, state: OptimizerState, lr):
    """``v <- momentum * v + g + wd * theta; theta <- theta - lr * v``."""
    for p in params:
        _check_finite(p)
    for p in params:
        v = state.velocity.get(p.name)
        if v is None:
            v = state.velocity[p.name] = np.zeros_like(p.value)
        v *= config.momentum
        v += p.grad
        if config.weight_decay:
            v += config.weight_decay * p.value
        p.value -= lr * v
    return params


def step(params, config: OptimizerConfig, state: OptimizerState):
    """Apply the configured update at the scheduled rate and advance the step.

    Returns the learning rate used.
    """
    lr = cosine_lr(state.step, config.total_steps, config.eta0)
    if config.algorithm == BETA_LASSO:
        beta_lasso_step(params, config, state, lr)
    else:
        sgd_step(params, config, state, lr)
    state.step += 1
    return lr

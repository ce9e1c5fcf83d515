"""Adam with bias correction and a step-halving learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


@dataclass
class OptimConfig:
    alpha: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    halve_every: int = 15
    epochs: int = 50
    minibatch: int = 128
    dropout_p: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def effective_rate(cfg: OptimConfig, epoch: int) -> float:
    """Base rate halved once per ``halve_every`` completed epochs."""
    return cfg.alpha / (2 ** (epoch // cfg.halve_every))


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: OptimConfig,
    epoch: int,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One in-place Adam update over every named parameter tensor.

    Tensors are visited in sorted name order so accumulation is reproducible.
    """
    state.step += 1
    t = state.step
    lr = effective_rate(cfg, epoch)
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad shape {g.shape} != param shape {p.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.epsilon)
    return params, state

"""AdamW with decoupled weight decay, in functional form.

Parameters and gradients travel as name -> array maps; a step returns
fresh arrays so callers can keep earlier snapshots (e.g. best-epoch
weights) without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerConfig:
    learning_rate: float = 3e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0  # global-norm clip; 0 disables

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("betas must lie in [0, 1)")


@dataclass
class OptimizerState:
    """First/second moment accumulators plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray],
                   weight_decay: float = 0.0) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            step=0,
            weight_decay=weight_decay,
        )


def clip_global_norm(grads: dict[str, np.ndarray],
                     max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    The norm accumulates in sorted-name order so the result does not
    depend on dict construction order.
    """
    total = 0.0
    for name in sorted(grads):
        g = grads[name].ravel()
        total += float(np.dot(g, g))
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def optimizer_step(state: OptimizerState, params: dict[str, np.ndarray],
                   grads: dict[str, np.ndarray], cfg: OptimizerConfig,
                   ) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One AdamW update; missing gradients are treated as zero.

    Weight decay is decoupled: applied directly to the parameter, not
    routed through the moment estimates.
    """
    if cfg.grad_clip > 0:
        grads = clip_global_norm(grads, cfg.grad_clip)
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name} with shape {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        decayed = p - cfg.learning_rate * cfg.weight_decay * p
        new_params[name] = (decayed - cfg.learning_rate * update).astype(
            p.dtype, copy=False)
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimizerState(new_m, new_v, t, cfg.weight_decay)


__all__ = ["OptimizerConfig", "OptimizerState", "clip_global_norm",
           "optimizer_step"]

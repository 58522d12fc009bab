"""Rectified Adam with an optional linear learning-rate warm-up.

While the variance of the adaptive step is not yet tractable
(``rho_t <= 4``) the update falls back to bias-corrected momentum SGD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import torch

SI_LR = 1e-3
TC_LR = 1e-4
MLM_LR = 1e-4


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimState:
    lr: float
    warmup_steps: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    def lr_at(self, step: int) -> float:
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, step / self.warmup_steps)


def rectification(step: int, beta2: float) -> float | None:
    """Variance rectification factor, or None while it is undefined."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2 ** step
    rho_t = rho_inf - 2.0 * step * b2t / (1.0 - b2t)
    if rho_t <= 4.0:
        return None
    return math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))


@torch.no_grad()
def optimizer_step(state: OptimState, params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor]):
    """Apply one update to ``params`` in place and return them."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} != parameter shape {tuple(params[name].shape)} for {name}")
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    lr = state.lr_at(t)
    b1, b2 = state.beta1, state.beta2
    r = rectification(t, b2)
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        v = state.v[name]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        m_hat = m / (1 - b1 ** t)
        if r is None:
            p.sub_(lr * m_hat)
        else:
            denom = (v / (1 - b2 ** t)).sqrt_().add_(state.eps)
            p.sub_(lr * r * m_hat / denom)
    return params


class RAdam:
    """Drives :func:`optimizer_step` from ``.grad`` of named module parameters."""

    def __init__(self, named_params: Iterable[tuple[str, torch.nn.Parameter]], lr: float, warmup_steps: int = 0):
        self.params = {n: p for n, p in named_params if p.requires_grad}
        self.state = OptimState(lr=lr, warmup_steps=warmup_steps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        optimizer_step(self.state, {n: p.data for n, p in self.params.items()}, grads)

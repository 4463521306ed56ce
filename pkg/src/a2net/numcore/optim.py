from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from a2net.numcore.tensor import Node


@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Node]) -> "AdamState":
        return cls(0, [np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(
    params: Sequence[Node],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(state.m) != len(params):
        raise ValueError(f"optimizer state holds {len(state.m)} slots for {len(params)} params")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ValueError(f"optimizer state shape {m.shape} != parameter shape {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def step_lr(base_lr: float, epoch: int, decay_epoch: int, factor: float = 0.1) -> float:
    """Learning rate for a 0-based ``epoch`` under a single step decay."""
    return base_lr * factor if decay_epoch > 0 and epoch >= decay_epoch else base_lr


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params: Sequence[Node], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState.for_params(self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(
            self.params,
            [p.grad for p in self.params],
            self.state,
            self.lr,
            self.betas[0],
            self.betas[1],
            self.eps,
        )

    def state_arrays(self, names: Sequence[str]) -> Dict[str, np.ndarray]:
        out = {"adam.step": np.array([float(self.state.step)])}
        for name, m, v in zip(names, self.state.m, self.state.v):
            out[f"adam.m.{name}"] = m
            out[f"adam.v.{name}"] = v
        return out

    def load_state_arrays(self, names: Sequence[str], arrays: Dict[str, np.ndarray]) -> None:
        self.state.step = int(arrays["adam.step"][0])
        self.state.m = [np.array(arrays[f"adam.m.{n}"]) for n in names]
        self.state.v = [np.array(arrays[f"adam.v.{n}"]) for n in names]

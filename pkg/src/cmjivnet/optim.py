"""Adam optimizer operating on named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, name: str, param: Tensor) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(param.data)
            self.v[name] = np.zeros_like(param.data)


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """Apply one bias-corrected Adam update in place.

    ``params`` maps name -> Tensor and ``grads`` maps name -> ndarray; every
    parameter must have a gradient entry (zero arrays are fine).
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    scale = state.lr * np.sqrt(1.0 - b2 ** t) / (1.0 - b1 ** t)
    for name, p in params.items():
        g = grads[name]
        state.ensure(name, p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (scale * m / (np.sqrt(v) + state.eps)).astype(p.data.dtype, copy=False)

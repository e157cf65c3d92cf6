from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


class NoTrainableParameters(RuntimeError):
    pass


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(store: ParamStore, state: OptimizerState) -> None:
    """Adam update of the trainable parameters, then zero every gradient."""
    params = store.trainable()
    if not params:
        raise NoTrainableParameters("no trainable parameters")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.lr != 0.0:
            p.value = p.value - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    store.zero_grad()

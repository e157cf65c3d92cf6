from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .params import Param
from .tensor import Tensor, no_grad


@dataclass
class GradCheckEntry:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def error(self) -> float:
        return abs(self.analytic - self.numeric) / max(1.0, abs(self.analytic))


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float

    @property
    def max_error(self) -> float:
        return max((e.error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.error >= self.tol]


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Param],
    h: float = 1e-6,
    tol: float = 1e-4,
    max_entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
    analytic: dict[str, np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients with central differences, entry by entry.

    ``analytic`` overrides the backprop gradients (used for negative controls).
    """
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.value)
    loss = loss_fn()
    loss.backward()
    grads = {p.name: p.grad.copy() for p in params}
    if analytic is not None:
        grads.update(analytic)
    entries = []
    for p in params:
        idxs = list(np.ndindex(p.value.shape))
        if max_entries_per_param is not None and len(idxs) > max_entries_per_param:
            rng = rng or np.random.default_rng(0)
            pick = rng.choice(len(idxs), size=max_entries_per_param, replace=False)
            idxs = [idxs[i] for i in sorted(pick)]
        for idx in idxs:
            orig = p.value[idx]
            with no_grad():
                p.value[idx] = orig + h
                up = loss_fn().item()
                p.value[idx] = orig - h
                down = loss_fn().item()
                p.value[idx] = orig
            entries.append(GradCheckEntry(p.name, idx, float(grads[p.name][idx]), (up - down) / (2 * h)))
    for p in params:
        p.grad = np.zeros_like(p.value)
    return GradCheckReport(entries, tol)

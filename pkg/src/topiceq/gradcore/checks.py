"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore
from .rng import Rng
from .tape import Tape, Var


@dataclass
class FiniteDiffReport:
    max_rel_err: float
    tol: float
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def finite_diff_check(
    build_loss: Callable[[], tuple[Tape, Var]],
    store: ParamStore,
    step: float = 1e-5,
    tol: float = 1e-4,
    coords_per_tensor: int = 50,
    rng: Rng | None = None,
) -> FiniteDiffReport:
    """Compare tape gradients with central finite differences.

    `build_loss` must rebuild the loss graph from the current store values and
    be deterministic (freeze any noise inputs inside it).  Up to
    `coords_per_tensor` coordinates are sampled per tensor (all of them for
    small tensors).  The relative error denominator is floored at 1e-4 so
    near-zero derivatives are compared absolutely.
    """
    rng = rng or Rng(0)

    tape, loss = build_loss()
    store.zero_grads()
    tape.backward(loss, store)
    analytic = {n: store.grads[n].copy() for n in store.names()}
    store.zero_grads()

    def loss_value() -> float:
        _, lv = build_loss()
        return float(lv.value)

    per_tensor: dict[str, float] = {}
    worst = 0.0
    for name in store.names():
        flat = store.values[name].reshape(-1)
        size = flat.size
        if size <= coords_per_tensor:
            coords = np.arange(size)
        else:
            coords = np.unique(
                np.asarray([rng.randint(size) for _ in range(coords_per_tensor * 2)])
            )[:coords_per_tensor]
        t_worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            f_plus = loss_value()
            flat[c] = orig - step
            f_minus = loss_value()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            t_worst = max(t_worst, rel)
        per_tensor[name] = t_worst
        worst = max(worst, t_worst)
    return FiniteDiffReport(max_rel_err=worst, tol=tol, per_tensor=per_tensor)

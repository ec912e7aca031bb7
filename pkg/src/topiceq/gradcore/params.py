"""Named parameter store: values, gradient accumulators, Adam moments."""

from __future__ import annotations

import math

import numpy as np

from .rng import Rng


class ParamStore:
    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise ValueError(f"parameter '{name}' already exists")
        arr = np.asarray(value, dtype=np.float64)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def names(self) -> list[str]:
        return sorted(self.values)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def freeze_prefix(self, prefix: str) -> None:
        self.frozen.update(n for n in self.values if n.startswith(prefix))

    def copy_values(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.values.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for n, v in values.items():
            if n in self.values and self.values[n].shape != v.shape:
                raise ValueError(f"shape mismatch for '{n}'")
            self.values[n] = np.asarray(v, dtype=np.float64).copy()
            self.grads[n] = np.zeros_like(self.values[n])
            self.m[n] = np.zeros_like(self.values[n])
            self.v[n] = np.zeros_like(self.values[n])


def glorot_uniform(rng: Rng, shape: tuple[int, ...]) -> np.ndarray:
    """uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = shape[0], shape[-1]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform(shape) * 2.0 - 1.0) * a


def clip_global_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip global norm.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    sq = 0.0
    for name in store.names():
        g = store.grads[name]
        sq += float((g * g).sum())
    norm = math.sqrt(sq)
    if norm > max_norm:
        factor = max_norm / norm
        for name in store.names():
            store.grads[name] *= factor
    return norm


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> None:
    """Bias-corrected Adam update; gradients are zeroed afterwards.

    Frozen parameters keep their values (their gradients are discarded).
    """
    if t < 1:
        raise ValueError("step counter t starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name in store.names():
        g = store.grads[name]
        if name not in store.frozen:
            m = store.m[name]
            v = store.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            store.values[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        g[...] = 0.0

"""Reverse-mode automatic differentiation over a recorded tape.

Every operation appends a node (value + backward closure) to the tape; node
inputs always have smaller ids, so a single reverse sweep propagates
adjoints.  Values are float64 numpy arrays throughout.  Any non-finite
forward value raises NumericsError immediately rather than letting NaNs
propagate into the optimizer.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericsError, ShapeError
from .params import ParamStore
from .rng import Rng


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tape:
    def __init__(self):
        self._backs: list[Callable[[np.ndarray], list[tuple[int, np.ndarray]]] | None] = []
        self._param_nodes: list[tuple[int, str]] = []

    # -- node plumbing ---------------------------------------------------

    def _push(self, value: np.ndarray, back, op: str) -> Var:
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericsError(f"non-finite value out of op '{op}'")
        self._backs.append(back)
        return Var(self, len(self._backs) - 1, value)

    def const(self, x) -> Var:
        return self._push(np.asarray(x, dtype=np.float64), None, "const")

    def param(self, store: ParamStore, name: str) -> Var:
        v = self._push(store.values[name], None, "param")
        self._param_nodes.append((v.idx, name))
        return v

    # -- arithmetic -------------------------------------------------------

    def add(self, a: Var, b: Var) -> Var:
        va, vb = a.value, b.value
        try:
            out = va + vb
        except ValueError as e:
            raise ShapeError(str(e)) from e

        def back(g):
            return [(a.idx, _unbroadcast(g, va.shape)), (b.idx, _unbroadcast(g, vb.shape))]

        return self._push(out, back, "add")

    def sub(self, a: Var, b: Var) -> Var:
        va, vb = a.value, b.value
        out = va - vb

        def back(g):
            return [(a.idx, _unbroadcast(g, va.shape)), (b.idx, _unbroadcast(-g, vb.shape))]

        return self._push(out, back, "sub")

    def neg(self, a: Var) -> Var:
        return self._push(-a.value, lambda g: [(a.idx, -g)], "neg")

    def mul(self, a: Var, b: Var) -> Var:
        va, vb = a.value, b.value
        try:
            out = va * vb
        except ValueError as e:
            raise ShapeError(str(e)) from e

        def back(g):
            return [(a.idx, _unbroadcast(g * vb, va.shape)), (b.idx, _unbroadcast(g * va, vb.shape))]

        return self._push(out, back, "mul")

    def div(self, a: Var, b: Var) -> Var:
        va, vb = a.value, b.value
        out = va / vb

        def back(g):
            return [
                (a.idx, _unbroadcast(g / vb, va.shape)),
                (b.idx, _unbroadcast(-g * va / (vb * vb), vb.shape)),
            ]

        return self._push(out, back, "div")

    def scale(self, a: Var, c: float) -> Var:
        return self._push(a.value * c, lambda g: [(a.idx, g * c)], "scale")

    def add_scalar(self, a: Var, c: float) -> Var:
        return self._push(a.value + c, lambda g: [(a.idx, g)], "add_scalar")

    def matmul(self, a: Var, b: Var) -> Var:
        va, vb = a.value, b.value
        if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
            raise ShapeError(f"matmul shapes {va.shape} x {vb.shape}")
        out = va @ vb

        def back(g):
            return [(a.idx, g @ vb.T), (b.idx, va.T @ g)]

        return self._push(out, back, "matmul")

    def transpose(self, a: Var) -> Var:
        return self._push(a.value.T, lambda g: [(a.idx, g.T)], "transpose")

    def reshape(self, a: Var, shape) -> Var:
        old = a.value.shape
        return self._push(a.value.reshape(shape), lambda g: [(a.idx, g.reshape(old))], "reshape")

    def concat_cols(self, parts: Sequence[Var]) -> Var:
        vals = [p.value for p in parts]
        if any(v.ndim != 2 for v in vals):
            raise ShapeError("concat_cols expects 2-D inputs")
        out = np.concatenate(vals, axis=1)
        widths = [v.shape[1] for v in vals]
        offsets = np.cumsum([0] + widths)

        def back(g):
            return [
                (p.idx, g[:, offsets[i] : offsets[i + 1]]) for i, p in enumerate(parts)
            ]

        return self._push(out, back, "concat_cols")

    # -- nonlinearities ----------------------------------------------------

    def sigmoid(self, a: Var) -> Var:
        x = a.value
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)

        def back(g):
            return [(a.idx, g * out * (1.0 - out))]

        return self._push(out, back, "sigmoid")

    def tanh(self, a: Var) -> Var:
        out = np.tanh(a.value)
        return self._push(out, lambda g: [(a.idx, g * (1.0 - out * out))], "tanh")

    def exp(self, a: Var) -> Var:
        out = np.exp(a.value)
        return self._push(out, lambda g: [(a.idx, g * out)], "exp")

    def log(self, a: Var) -> Var:
        va = a.value
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(va)
        return self._push(out, lambda g: [(a.idx, g / va)], "log")

    def sqrt(self, a: Var) -> Var:
        out = np.sqrt(a.value)
        return self._push(out, lambda g: [(a.idx, 0.5 * g / out)], "sqrt")

    def clip(self, a: Var, lo: float, hi: float) -> Var:
        va = a.value
        mask = (va >= lo) & (va <= hi)
        return self._push(np.clip(va, lo, hi), lambda g: [(a.idx, g * mask)], "clip")

    def softmax(self, a: Var) -> Var:
        """Row-wise softmax of a 2-D array (1-D treated as one row)."""
        x = a.value
        squeeze = x.ndim == 1
        x2 = x[None, :] if squeeze else x
        e = np.exp(x2 - x2.max(axis=1, keepdims=True))
        s = e / e.sum(axis=1, keepdims=True)
        out = s[0] if squeeze else s

        def back(g):
            g2 = g[None, :] if squeeze else g
            gx = s * (g2 - (g2 * s).sum(axis=1, keepdims=True))
            return [(a.idx, gx[0] if squeeze else gx)]

        return self._push(out, back, "softmax")

    def categorical_nll(self, logits: Var, target_ids: np.ndarray) -> Var:
        """Per-row negative log-likelihood of target ids under softmax(logits)."""
        x = logits.value
        ids = np.asarray(target_ids, dtype=np.int64)
        if x.ndim != 2 or ids.shape != (x.shape[0],):
            raise ShapeError(f"categorical_nll logits {x.shape}, targets {ids.shape}")
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= x.shape[1]:
            raise ValueError("target id out of vocabulary range")
        m = x.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
        rows = np.arange(x.shape[0])
        out = lse - x[rows, ids]

        def back(g):
            sm = np.exp(x - m)
            sm /= sm.sum(axis=1, keepdims=True)
            sm[rows, ids] -= 1.0
            return [(logits.idx, sm * g[:, None])]

        return self._push(out, back, "categorical_nll")

    # -- structural --------------------------------------------------------

    def gather_rows(self, a: Var, row_ids: np.ndarray) -> Var:
        ids = np.asarray(row_ids, dtype=np.int64)
        va = a.value

        def back(g):
            acc = np.zeros_like(va)
            np.add.at(acc, ids, g)
            return [(a.idx, acc)]

        return self._push(va[ids], back, "gather_rows")

    def embed_lookup(self, table: Var, ids: np.ndarray) -> Var:
        """Row lookup into an embedding matrix; alias of gather_rows."""
        return self.gather_rows(table, ids)

    def dropout(self, a: Var, rate: float, rng: Rng, train: bool) -> Var:
        """Inverted dropout; exact identity (same node) when not training."""
        if not train or rate <= 0.0:
            return a
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        mask = (rng.uniform(a.value.shape) >= rate) / (1.0 - rate)
        return self._push(a.value * mask, lambda g: [(a.idx, g * mask)], "dropout")

    def reduce_sum(self, a: Var, axis: int | None = None) -> Var:
        va = a.value
        out = va.sum(axis=axis)

        def back(g):
            if axis is None:
                return [(a.idx, np.broadcast_to(g, va.shape).copy())]
            return [(a.idx, np.broadcast_to(np.expand_dims(g, axis), va.shape).copy())]

        return self._push(out, back, "reduce_sum")

    def mean_all(self, a: Var) -> Var:
        return self.scale(self.reduce_sum(a), 1.0 / a.value.size)

    def affine(self, x: Var, w: Var, b: Var) -> Var:
        """x @ w + b with b broadcast across rows."""
        return self.add(self.matmul(x, w), b)

    # -- reverse sweep -----------------------------------------------------

    def backward(self, loss: Var, store: ParamStore) -> None:
        """Accumulate d(loss)/d(param) into store gradients for every param node."""
        if loss.value.size != 1:
            raise ShapeError("backward requires a scalar loss")
        adjoints: dict[int, np.ndarray] = {loss.idx: np.ones_like(loss.value)}
        param_at: dict[int, str] = dict(self._param_nodes)
        for idx in range(loss.idx, -1, -1):
            g = adjoints.pop(idx, None)
            if g is None:
                continue
            name = param_at.get(idx)
            if name is not None:
                store.grads[name] += g
            back = self._backs[idx]
            if back is None:
                continue
            for pidx, pg in back(g):
                if pidx in adjoints:
                    adjoints[pidx] = adjoints[pidx] + pg
                else:
                    adjoints[pidx] = pg

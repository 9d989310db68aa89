"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Ops are methods of `Tape`; each validates shapes up front (errors surface
at construction time, never during backward), computes its value eagerly
and records a vector-Jacobian closure. `Tape.backward` walks the records
in reverse, accumulating gradients into `Tensor.grad`.

The primitive set is fixed to exactly what the encoder, decoder and loss
need; there is no general broadcasting beyond 2-D-with-row-vector and
2-D-with-column-scaling.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError


class Tensor:
    """A dense array plus an optional accumulated gradient of equal shape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


def parameter(data, name: str) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def _require_2d(x: Tensor, op: str) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"{op}: expected 2-D operand, got shape {x.shape}")


class Tape:
    """Records ops during a forward pass; replays their VJPs in reverse."""

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def _emit(self, data: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            self._records.append((out, parents, vjp))
        return out

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/dx into x.grad for every tensor on the tape."""
        if loss.data.shape != ():
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        if loss.grad is None:
            loss.grad = np.ones((), dtype=loss.data.dtype)
        for out, parents, vjp in reversed(self._records):
            if out.grad is None or not out.requires_grad:
                continue
            for p, g in zip(parents, vjp(out.grad)):
                if g is None or not p.requires_grad:
                    continue
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
                p.grad += g

    # -- elementwise arithmetic -------------------------------------------

    def _binary_shapes(self, a: Tensor, b: Tensor, op: str) -> bool:
        """True when b is a 1-D row vector broadcast against 2-D a."""
        if a.shape == b.shape:
            return False
        if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
            return True
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")

    @staticmethod
    def _reduce_row(g: np.ndarray) -> np.ndarray:
        return g.sum(axis=0)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        row = self._binary_shapes(a, b, "add")
        def vjp(g):
            return g, self._reduce_row(g) if row else g
        return self._emit(a.data + b.data, (a, b), vjp)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        row = self._binary_shapes(a, b, "sub")
        def vjp(g):
            return g, -(self._reduce_row(g) if row else g)
        return self._emit(a.data - b.data, (a, b), vjp)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        row = self._binary_shapes(a, b, "mul")
        def vjp(g):
            ga = g * b.data
            gb = g * a.data
            return ga, self._reduce_row(gb) if row else gb
        return self._emit(a.data * b.data, (a, b), vjp)

    def div(self, a: Tensor, b: Tensor) -> Tensor:
        row = self._binary_shapes(a, b, "div")
        def vjp(g):
            ga = g / b.data
            gb = -g * a.data / (b.data * b.data)
            return ga, self._reduce_row(gb) if row else gb
        return self._emit(a.data / b.data, (a, b), vjp)

    def neg(self, a: Tensor) -> Tensor:
        return self._emit(-a.data, (a,), lambda g: (-g,))

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._emit(a.data * c, (a,), lambda g: (g * c,))

    def add_const(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        return self._emit(a.data + c, (a,), lambda g: (g,))

    def scale_rows(self, a: Tensor, vec: np.ndarray) -> Tensor:
        """Multiply each row of 2-D `a` by a constant per-row coefficient."""
        _require_2d(a, "scale_rows")
        vec = np.asarray(vec)
        if vec.shape != (a.shape[0],):
            raise ShapeError(f"scale_rows: need coefficients of shape ({a.shape[0]},), got {vec.shape}")
        col = vec[:, None]
        return self._emit(a.data * col, (a,), lambda g: (g * col,))

    # -- nonlinearities ----------------------------------------------------

    def tanh(self, a: Tensor) -> Tensor:
        y = np.tanh(a.data)
        return self._emit(y, (a,), lambda g: (g * (1.0 - y * y),))

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0
        return self._emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))

    def sqrt(self, a: Tensor) -> Tensor:
        y = np.sqrt(a.data)
        return self._emit(y, (a,), lambda g: (g / (2.0 * y),))

    # -- linear algebra / reshaping ----------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        _require_2d(a, "matmul")
        _require_2d(b, "matmul")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims differ: {a.shape} @ {b.shape}")
        def vjp(g):
            return g @ b.data.T, a.data.T @ g
        return self._emit(a.data @ b.data, (a, b), vjp)

    def reshape(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        data = a.data.reshape(shape)
        return self._emit(data, (a,), lambda g: (g.reshape(a.shape),))

    def concat_rows(self, parts: Sequence[Tensor]) -> Tensor:
        parts = list(parts)
        if not parts:
            raise ShapeError("concat_rows: need at least one part")
        for p in parts:
            _require_2d(p, "concat_rows")
            if p.shape[1] != parts[0].shape[1]:
                raise ShapeError(f"concat_rows: column mismatch {p.shape} vs {parts[0].shape}")
        sizes = [p.shape[0] for p in parts]
        offsets = np.cumsum([0] + sizes)
        def vjp(g):
            return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))
        return self._emit(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        _require_2d(a, "concat_cols")
        _require_2d(b, "concat_cols")
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"concat_cols: row mismatch {a.shape} vs {b.shape}")
        na = a.shape[1]
        def vjp(g):
            return g[:, :na], g[:, na:]
        return self._emit(np.concatenate([a.data, b.data], axis=1), (a, b), vjp)

    # -- gather / scatter ----------------------------------------------------

    def gather(self, a: Tensor, idx: np.ndarray) -> Tensor:
        """Select rows of `a` by integer index (with repetition allowed)."""
        _require_2d(a, "gather")
        idx = np.asarray(idx)
        if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
            raise ShapeError(f"gather: index must be a 1-D integer array, got {idx.dtype} {idx.shape}")
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
            raise ShapeError(f"gather: index out of range [0, {a.shape[0]})")
        def vjp(g):
            out = np.zeros_like(a.data)
            np.add.at(out, idx, g)
            return (out,)
        return self._emit(a.data[idx], (a,), vjp)

    def segment_sum(self, a: Tensor, idx: np.ndarray, n_segments: int) -> Tensor:
        """Sum rows of `a` into `n_segments` buckets given by `idx`."""
        _require_2d(a, "segment_sum")
        idx = np.asarray(idx)
        if idx.shape != (a.shape[0],) or not np.issubdtype(idx.dtype, np.integer):
            raise ShapeError(f"segment_sum: index must be 1-D integer of length {a.shape[0]}")
        if idx.size and (idx.min() < 0 or idx.max() >= n_segments):
            raise ShapeError(f"segment_sum: segment id out of range [0, {n_segments})")
        out = np.zeros((n_segments, a.shape[1]), dtype=a.data.dtype)
        np.add.at(out, idx, a.data)
        return self._emit(out, (a,), lambda g: (g[idx],))

    # -- reductions ----------------------------------------------------------

    def row_sum(self, a: Tensor) -> Tensor:
        _require_2d(a, "row_sum")
        def vjp(g):
            return (np.broadcast_to(g[:, None], a.shape).copy(),)
        return self._emit(a.data.sum(axis=1), (a,), vjp)

    def sum(self, a: Tensor) -> Tensor:
        def vjp(g):
            return (np.broadcast_to(g, a.shape).copy(),)
        return self._emit(np.asarray(a.data.sum()), (a,), vjp)

    def mean_rows(self, a: Tensor) -> Tensor:
        """Column means of a 2-D array (reduces axis 0)."""
        _require_2d(a, "mean_rows")
        m = a.shape[0]
        if m == 0:
            raise ShapeError("mean_rows: empty input")
        def vjp(g):
            return (np.broadcast_to(g / m, a.shape).copy(),)
        return self._emit(a.data.mean(axis=0), (a,), vjp)

    # -- structured ops --------------------------------------------------------

    def rotate(self, x: Tensor, rel: Tensor) -> Tensor:
        """Complex rotation of entity rows by relation phase angles.

        Rows of `x` are read as d/2 complex pairs (first half real parts,
        second half imaginary parts) and multiplied elementwise by the
        unit-modulus phasor exp(i * theta), where theta is the first d/2
        coordinates of the matching `rel` row. A zero relation row is the
        identity rotation.
        """
        _require_2d(x, "rotate")
        _require_2d(rel, "rotate")
        if x.shape != rel.shape:
            raise ShapeError(f"rotate: operand shapes differ: {x.shape} vs {rel.shape}")
        d = x.shape[1]
        if d % 2 != 0:
            raise ShapeError(f"rotate: needs an even feature dimension, got {d}")
        h = d // 2
        re, im = x.data[:, :h], x.data[:, h:]
        theta = rel.data[:, :h]
        c, s = np.cos(theta), np.sin(theta)
        out = np.concatenate([re * c - im * s, re * s + im * c], axis=1)

        def vjp(g):
            g1, g2 = g[:, :h], g[:, h:]
            gx = np.concatenate([g1 * c + g2 * s, -g1 * s + g2 * c], axis=1)
            gtheta = g1 * (-re * s - im * c) + g2 * (re * c - im * s)
            grel = np.concatenate([gtheta, np.zeros_like(gtheta)], axis=1)
            return gx, grel

        return self._emit(out, (x, rel), vjp)

    def circular_conv(self, x: Tensor, filt: Tensor) -> Tensor:
        """Circular convolution of each row of `x` with a short 1-D filter:
        out[:, j] = sum_k filt[k] * x[:, (j + k) mod d]."""
        _require_2d(x, "circular_conv")
        if filt.data.ndim != 1:
            raise ShapeError(f"circular_conv: filter must be 1-D, got shape {filt.shape}")
        d, L = x.shape[1], filt.shape[0]
        if L > d:
            raise ShapeError(f"circular_conv: filter length {L} exceeds feature dim {d}")
        out = np.zeros_like(x.data)
        for k in range(L):
            out += filt.data[k] * np.roll(x.data, -k, axis=1)

        def vjp(g):
            gx = np.zeros_like(x.data)
            gf = np.zeros_like(filt.data)
            for k in range(L):
                gx += filt.data[k] * np.roll(g, k, axis=1)
                gf[k] = np.sum(g * np.roll(x.data, -k, axis=1))
            return gx, gf

        return self._emit(out, (x, filt), vjp)

    def dropout(self, x: Tensor, rate: float, rng: np.random.Generator,
                training: bool) -> Tensor:
        """Inverted dropout: scales kept activations by 1/(1-rate) so the
        expected value is unchanged. Identity when not training."""
        if not 0.0 <= rate < 1.0:
            raise ShapeError(f"dropout: rate must be in [0, 1), got {rate}")
        if not training or rate == 0.0:
            return x
        mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
        return self._emit(x.data * mask, (x,), lambda g: (g * mask,))

    def softmax_cross_entropy(self, scores: Tensor) -> Tensor:
        """Sum over rows of -log softmax(row)[0]; column 0 holds the
        positive score, the rest are negatives. Max-subtracted for
        stability."""
        _require_2d(scores, "softmax_cross_entropy")
        if scores.shape[1] < 1:
            raise ShapeError("softmax_cross_entropy: need at least one column")
        z = scores.data - scores.data.max(axis=1, keepdims=True)
        ez = np.exp(z)
        denom = ez.sum(axis=1, keepdims=True)
        p = ez / denom
        loss = np.log(denom[:, 0]) - z[:, 0]

        def vjp(g):
            grad = p * g
            grad[:, 0] -= g
            return (grad,)

        return self._emit(np.asarray(loss.sum()), (scores,), vjp)

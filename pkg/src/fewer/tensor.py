"""Dense 2-D float64 tensors and a reverse-mode autodiff tape.

The tape is an append-only list of nodes. Every operation validates its
operands, computes the forward value eagerly, and records what the
reverse sweep needs. Gradients come from a single backward pass that
walks the tape once, newest to oldest, so cost is linear in the number
of recorded operations.

One tape belongs to one training step. Tensors are immutable (their
buffers are frozen on creation) and safe to share between graphs for
reading; recording is single-threaded by construction.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ParameterError, ShapeError

Array = np.ndarray


def _as_matrix(values) -> Array:
    """Coerce input to a fresh 2-D float64 array, treating 1-D as one row."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 1-D or 2-D array, got ndim={arr.ndim}")
    if arr.size == 0:
        raise ShapeError("tensors must have at least one row and one column")
    return arr


class Tensor:
    """Handle to one tape node: a frozen (rows x cols) float64 matrix."""

    __slots__ = ("tape", "node_id", "value")

    def __init__(self, tape: "Tape", node_id: int, value: Array):
        self.tape = tape
        self.node_id = node_id
        self.value = value

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(node={self.node_id}, shape={self.value.shape})"


class _Node:
    __slots__ = ("kind", "inputs", "value", "ctx")

    def __init__(self, kind: str, inputs: tuple[int, ...], value: Array, ctx=None):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.ctx = ctx


class Tape:
    """Records operations and replays them in reverse for gradients."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, kind: str, inputs: tuple[int, ...], value: Array, ctx=None) -> Tensor:
        value.setflags(write=False)
        node = _Node(kind, inputs, value, ctx)
        self._nodes.append(node)
        return Tensor(self, len(self._nodes) - 1, value)

    def _check_owned(self, *tensors: Tensor):
        for t in tensors:
            if t.tape is not self:
                raise ParameterError("tensor belongs to a different tape")

    # -- graph construction ------------------------------------------------

    def leaf(self, values) -> Tensor:
        """Enter external data (parameters or inputs) onto the tape."""
        arr = _as_matrix(values)
        if not np.all(np.isfinite(arr)):
            raise DataError("leaf values must be finite")
        return self._record("leaf", (), arr)

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_owned(a, b)
        if a.cols != b.rows:
            raise ShapeError(f"matmul mismatch: ({a.rows}x{a.cols}) @ ({b.rows}x{b.cols})")
        return self._record("matmul", (a.node_id, b.node_id), a.value @ b.value)

    def _binary(self, kind: str, a: Tensor, b: Tensor, value: Array) -> Tensor:
        return self._record(kind, (a.node_id, b.node_id), value)

    def _check_same_shape(self, kind: str, a: Tensor, b: Tensor):
        self._check_owned(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"{kind} requires equal shapes, got {a.shape} and {b.shape}")

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_shape("add", a, b)
        return self._binary("add", a, b, a.value + b.value)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_shape("sub", a, b)
        return self._binary("sub", a, b, a.value - b.value)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise (Hadamard) product."""
        self._check_same_shape("mul", a, b)
        return self._binary("mul", a, b, a.value * b.value)

    def relu(self, x: Tensor) -> Tensor:
        self._check_owned(x)
        return self._record("relu", (x.node_id,), np.maximum(x.value, 0.0))

    def sigmoid(self, x: Tensor) -> Tensor:
        self._check_owned(x)
        v = x.value
        # Split form keeps exp() off large positive arguments.
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return self._record("sigmoid", (x.node_id,), out)

    def tanh(self, x: Tensor) -> Tensor:
        self._check_owned(x)
        return self._record("tanh", (x.node_id,), np.tanh(x.value))

    def layer_norm(self, x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
        """Normalize a single row to zero mean / unit variance, then affine."""
        self._check_owned(x, gain, bias)
        if x.rows != 1 or gain.shape != x.shape or bias.shape != x.shape:
            raise ShapeError(
                f"layer_norm wants matching 1-row operands, got x={x.shape} "
                f"gain={gain.shape} bias={bias.shape}"
            )
        if x.cols < 2:
            raise ShapeError("layer_norm is degenerate below width 2")
        if eps < 0:
            raise ParameterError(f"layer_norm eps must be >= 0, got {eps}")
        mu = x.value.mean()
        var = x.value.var()
        if var + eps == 0.0:
            raise DataError("layer_norm input has zero variance and eps is 0")
        inv_std = 1.0 / np.sqrt(var + eps)
        y = (x.value - mu) * inv_std
        out = y * gain.value + bias.value
        return self._record(
            "layer_norm",
            (x.node_id, gain.node_id, bias.node_id),
            out,
            ctx=(y, inv_std, gain.value),
        )

    def mean_pool(self, x: Tensor) -> Tensor:
        """Average a (T x d) sequence over time into one (1 x d) row."""
        self._check_owned(x)
        return self._record("mean_pool", (x.node_id,), x.value.mean(axis=0, keepdims=True))

    def concat_cols(self, a: Tensor, b: Tensor) -> Tensor:
        """Join two single-row tensors side by side."""
        self._check_owned(a, b)
        if a.rows != 1 or b.rows != 1:
            raise ShapeError(f"concat_cols wants single rows, got {a.shape} and {b.shape}")
        value = np.concatenate([a.value, b.value], axis=1)
        return self._record("concat_cols", (a.node_id, b.node_id), value, ctx=a.cols)

    def dropout(self, x: Tensor, rate: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
        """Inverted dropout: train mode zeroes and rescales, eval is identity."""
        self._check_owned(x)
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        if mode not in ("train", "eval"):
            raise ParameterError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
        if mode == "eval":
            return self._record("dropout", (x.node_id,), x.value.copy(), ctx=None)
        if rng is None:
            raise ParameterError("train-mode dropout needs an rng")
        keep = rng.random(x.shape) >= rate
        scaled_mask = keep.astype(np.float64) / (1.0 - rate)
        return self._record("dropout", (x.node_id,), x.value * scaled_mask, ctx=scaled_mask)

    def rows(self, x: Tensor, start: int, stop: int) -> Tensor:
        """Slice rows [start, stop) out of a tensor."""
        self._check_owned(x)
        if not 0 <= start < stop <= x.rows:
            raise ShapeError(f"row slice [{start}, {stop}) out of range for {x.rows} rows")
        value = x.value[start:stop].copy()
        return self._record("rows", (x.node_id,), value, ctx=(start, stop, x.shape))

    def sum_all(self, x: Tensor) -> Tensor:
        """Total of every entry, as a 1x1 tensor."""
        self._check_owned(x)
        return self._record("sum_all", (x.node_id,), np.array([[x.value.sum()]]), ctx=x.shape)

    def scale(self, x: Tensor, factor: float) -> Tensor:
        """Multiply by a plain (non-differentiated) scalar constant."""
        self._check_owned(x)
        if not np.isfinite(factor):
            raise ParameterError(f"scale factor must be finite, got {factor}")
        return self._record("scale", (x.node_id,), x.value * factor, ctx=float(factor))

    # -- reverse sweep -----------------------------------------------------

    def backward(self, loss: Tensor) -> dict[int, Array]:
        """Differentiate a scalar loss with respect to every leaf.

        Returns a dict keyed by leaf node id. Leaves the loss never
        touched get explicit zero gradients, so callers can look up any
        leaf without special-casing.
        """
        self._check_owned(loss)
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
        grads: list[Array | None] = [None] * len(self._nodes)
        grads[loss.node_id] = np.ones((1, 1))

        def accumulate(node_id: int, g: Array):
            if grads[node_id] is None:
                grads[node_id] = g.copy()
            else:
                grads[node_id] += g

        for nid in range(loss.node_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self._nodes[nid]
            kind = node.kind
            if kind == "leaf":
                continue
            elif kind == "matmul":
                a, b = (self._nodes[i].value for i in node.inputs)
                accumulate(node.inputs[0], g @ b.T)
                accumulate(node.inputs[1], a.T @ g)
            elif kind == "add":
                accumulate(node.inputs[0], g)
                accumulate(node.inputs[1], g)
            elif kind == "sub":
                accumulate(node.inputs[0], g)
                accumulate(node.inputs[1], -g)
            elif kind == "mul":
                a, b = (self._nodes[i].value for i in node.inputs)
                accumulate(node.inputs[0], g * b)
                accumulate(node.inputs[1], g * a)
            elif kind == "relu":
                x = self._nodes[node.inputs[0]].value
                accumulate(node.inputs[0], g * (x > 0))
            elif kind == "sigmoid":
                s = node.value
                accumulate(node.inputs[0], g * s * (1.0 - s))
            elif kind == "tanh":
                t = node.value
                accumulate(node.inputs[0], g * (1.0 - t * t))
            elif kind == "layer_norm":
                y, inv_std, gain = node.ctx
                gh = g * gain
                dx = inv_std * (gh - gh.mean() - y * (gh * y).mean())
                accumulate(node.inputs[0], dx)
                accumulate(node.inputs[1], g * y)
                accumulate(node.inputs[2], g)
            elif kind == "mean_pool":
                t_len = self._nodes[node.inputs[0]].value.shape[0]
                accumulate(node.inputs[0], np.repeat(g / t_len, t_len, axis=0))
            elif kind == "concat_cols":
                split = node.ctx
                accumulate(node.inputs[0], g[:, :split])
                accumulate(node.inputs[1], g[:, split:])
            elif kind == "dropout":
                if node.ctx is None:
                    accumulate(node.inputs[0], g)
                else:
                    accumulate(node.inputs[0], g * node.ctx)
            elif kind == "rows":
                start, stop, in_shape = node.ctx
                full = np.zeros(in_shape)
                full[start:stop] = g
                accumulate(node.inputs[0], full)
            elif kind == "sum_all":
                accumulate(node.inputs[0], np.full(node.ctx, g[0, 0]))
            elif kind == "scale":
                accumulate(node.inputs[0], g * node.ctx)
            else:  # pragma: no cover - would be a construction bug
                raise AssertionError(f"unknown node kind {kind!r}")

        out: dict[int, Array] = {}
        for nid, node in enumerate(self._nodes):
            if node.kind == "leaf":
                g = grads[nid]
                out[nid] = np.zeros_like(node.value) if g is None else g
        return out

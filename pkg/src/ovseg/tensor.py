"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a backward closure on the output
tensor; ``backward`` on a scalar walks the recorded graph once in reverse
topological order and accumulates gradients into every tensor that was
created with ``requires_grad=True``. Frozen tensors (the default) never
receive gradients, which is what keeps pre-trained encoder weights
untouched during training.

Storage is row-major float64 throughout. Broadcasting is deliberately
limited to scalar-tensor arithmetic plus the two explicit ops that need
it (``add_bias``, ``tile_leading``), so every gradient rule stays easy
to audit against finite differences.

Forward outputs are checked for NaN/Inf by default; set the environment
variable OVSEG_NO_FINITE_CHECKS=1 (or call ``set_finite_checks(False)``)
to skip the checks in long production runs.
"""

from __future__ import annotations

import math
import os
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    AxisOutOfRange,
    GraphConsumed,
    NonFinite,
    NotScalar,
    ShapeMismatch,
)

_FINITE_CHECKS = os.environ.get("OVSEG_NO_FINITE_CHECKS", "") != "1"

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = enabled


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


class Tensor:
    """A float64 array plus optional gradient tracking.

    ``data`` is always a C-contiguous float64 ndarray. ``grad`` is None
    until a backward pass deposits a same-shape gradient. Tensors created
    by operations keep references to their inputs (``_parents``) and a
    closure (``_backward``) that maps the output gradient to input
    gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None = None
        self._op = ""
        self._consumed = False

    # -- static structure -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Copy of the values as a fresh constant leaf (no graph, no grad)."""
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeMismatch("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NonFinite(f"non-finite values produced by op '{op}'")


def _node(
    out_data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], tuple[np.ndarray | None, ...]],
    op: str,
) -> Tensor:
    _check_finite(out_data, op)
    out = Tensor(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        out._op = op
    return out


# -- construction -----------------------------------------------------------


def create(shape: Sequence[int], values: Sequence[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from an explicit shape and a flat row-major buffer."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeMismatch(f"non-positive dimension in shape {list(shape)}")
    flat = np.asarray(list(values), dtype=np.float64)
    n = int(np.prod(shape)) if shape else 1
    if flat.size != n:
        raise ShapeMismatch(f"shape {list(shape)} wants {n} values, got {flat.size}")
    if not np.all(np.isfinite(flat)):
        raise NonFinite("create() given NaN/Inf values")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def from_array(arr, requires_grad: bool = False) -> Tensor:
    a = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NonFinite("from_array() given NaN/Inf values")
    return Tensor(a, requires_grad=requires_grad)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=requires_grad)


# -- elementwise arithmetic ---------------------------------------------------


def _as_scalar(x) -> float | None:
    if isinstance(x, (int, float, np.floating, np.integer)):
        return float(x)
    return None


def add(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return _node(a.data + s, (a,), lambda g: (g,), "add_scalar")
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return _node(a.data - s, (a,), lambda g: (g,), "sub_scalar")
    if a.shape != b.shape:
        raise ShapeMismatch(f"sub: {a.shape} vs {b.shape}")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    s = _as_scalar(b)
    if s is not None:
        return _node(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def add_bias(t: Tensor, bias: Tensor) -> Tensor:
    """Add a vector along the last axis of ``t`` (the one broadcast we allow)."""
    if bias.data.ndim != 1 or t.shape[-1] != bias.shape[0]:
        raise ShapeMismatch(f"add_bias: {t.shape} vs bias {bias.shape}")
    axes = tuple(range(t.data.ndim - 1))

    def back(g):
        return g, g.sum(axis=axes) if axes else g

    return _node(t.data + bias.data, (t, bias), back, "add_bias")


def tile_leading(t: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of ``t`` along a new leading axis."""
    if n <= 0:
        raise ShapeMismatch("tile_leading: n must be positive")
    out = np.broadcast_to(t.data, (n,) + t.shape).copy()
    return _node(out, (t,), lambda g: (g.sum(axis=0),), "tile_leading")


# -- nonlinearities -----------------------------------------------------------


def gelu(t: Tensor) -> Tensor:
    x = t.data
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi

    def back(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (phi + x * pdf),)

    return _node(out, (t,), back, "gelu")


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (t,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- reductions ---------------------------------------------------------------


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise AxisOutOfRange(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


def tsum(t: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        out = t.data.sum()
        return _node(np.asarray(out), (t,), lambda g: (np.broadcast_to(g, t.shape).copy(),), "sum")
    ax = _norm_axis(axis, t.data.ndim, "sum")
    out = t.data.sum(axis=ax)
    return _node(out, (t,), lambda g: (np.repeat(np.expand_dims(g, ax), t.shape[ax], axis=ax),), "sum")


def tmean(t: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = t.data.size
        return mul(tsum(t), 1.0 / n)
    ax = _norm_axis(axis, t.data.ndim, "mean")
    return mul(tsum(t, ax), 1.0 / t.shape[ax])


# -- shape manipulation -------------------------------------------------------


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != t.data.size:
        raise ShapeMismatch(f"reshape: {t.shape} -> {list(shape)}")
    old = t.shape
    return _node(t.data.reshape(shape), (t,), lambda g: (g.reshape(old),), "reshape")


def transpose(t: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    nd = t.data.ndim
    if axes is None:
        axes = tuple(reversed(range(nd)))
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(nd)):
        raise AxisOutOfRange(f"transpose: bad permutation {list(axes)} for rank {nd}")
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(t.data.transpose(axes)), (t,), lambda g: (g.transpose(inv),), "transpose")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    ax = _norm_axis(axis, parts[0].data.ndim, "concat")
    out = np.concatenate([p.data for p in parts], axis=ax)
    sizes = [p.shape[ax] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, offsets, axis=ax))

    return _node(out, tuple(parts), back, "concat")


def split(t: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    ax = _norm_axis(axis, t.data.ndim, "split")
    if sum(sizes) != t.shape[ax]:
        raise ShapeMismatch(f"split: sizes {list(sizes)} do not cover axis of length {t.shape[ax]}")
    outs: list[Tensor] = []
    start = 0
    for sz in sizes:
        sl = [slice(None)] * t.data.ndim
        sl[ax] = slice(start, start + sz)
        sl = tuple(sl)

        def back(g, sl=sl):
            full = np.zeros(t.shape)
            full[sl] = g
            return (full,)

        outs.append(_node(np.ascontiguousarray(t.data[sl]), (t,), back, "split"))
        start += sz
    return outs


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul wants rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: inner dims {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over matching leading axes: [g,m,k] @ [g,k,n]."""
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeMismatch(f"bmm wants rank-3 operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeMismatch(f"bmm: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _node(
        np.matmul(ad, bd),
        (a, b),
        lambda g: (np.matmul(g, bd.transpose(0, 2, 1)), np.matmul(ad.transpose(0, 2, 1), g)),
        "bmm",
    )


# -- normalizations -----------------------------------------------------------


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, t.data.ndim, "softmax")
    shifted = t.data - t.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        return ((g - dot) * out,)

    return _node(out, (t,), back, "softmax")


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ShapeMismatch("layer_norm: eps must be positive")
    d = t.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs last axis {d}")
    x = t.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = xhat * gain.data + bias.data

    def back(g):
        lead = tuple(range(x.ndim - 1))
        dgain = (g * xhat).sum(axis=lead) if lead else (g * xhat)
        dbias = g.sum(axis=lead) if lead else g
        gx = g * gain.data
        dx = inv / d * (d * gx - gx.sum(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _node(out, (t, gain, bias), back, "layer_norm")


def l2_normalize(t: Tensor, axis: int = -1) -> Tensor:
    """Scale each slice along ``axis`` to unit Euclidean norm; zero slices stay zero."""
    ax = _norm_axis(axis, t.data.ndim, "l2_normalize")
    x = t.data
    norm = np.sqrt((x * x).sum(axis=ax, keepdims=True))
    safe = np.where(norm > 0.0, norm, 1.0)
    out = x / safe

    def back(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        return ((g - out * dot) / safe,)

    return _node(out, (t,), back, "l2_normalize")


# -- spatial ops (feature maps are [..., H, W, C]) ---------------------------


def upsample2x(t: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsampling of a [H,W,C] or [B,H,W,C] map."""
    nd = t.data.ndim
    if nd not in (3, 4):
        raise ShapeMismatch(f"upsample2x wants rank 3 or 4, got {t.shape}")
    h_ax = nd - 3
    out = t.data.repeat(2, axis=h_ax).repeat(2, axis=h_ax + 1)
    shape = t.shape

    def back(g):
        lead = shape[:h_ax]
        h, w, c = shape[h_ax], shape[h_ax + 1], shape[h_ax + 2]
        gg = g.reshape(lead + (h, 2, w, 2, c))
        return (gg.sum(axis=(h_ax + 1, h_ax + 3)),)

    return _node(out, (t,), back, "upsample2x")


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 same-padding convolution on [H,W,Cin] or [B,H,W,Cin] maps.

    Weights are [3,3,Cin,Cout], bias [Cout]. Implemented via im2col so the
    whole stage is one matmul.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ShapeMismatch(f"conv3x3 wants rank 3 or 4 input, got {x.shape}")
    if w.data.ndim != 4 or w.shape[0] != 3 or w.shape[1] != 3:
        raise ShapeMismatch(f"conv3x3 wants [3,3,Cin,Cout] weights, got {w.shape}")
    bsz, h, wd, cin = xd.shape
    if w.shape[2] != cin:
        raise ShapeMismatch(f"conv3x3: input channels {cin} vs weight {w.shape[2]}")
    cout = w.shape[3]
    if b.shape != (cout,):
        raise ShapeMismatch(f"conv3x3: bias {b.shape} vs Cout {cout}")

    xpad = np.pad(xd, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((bsz, h, wd, 9, cin))
    for k in range(9):
        dy, dx = divmod(k, 3)
        cols[:, :, :, k, :] = xpad[:, dy : dy + h, dx : dx + wd, :]
    cols2 = cols.reshape(bsz * h * wd, 9 * cin)
    wmat = w.data.reshape(9 * cin, cout)
    out = (cols2 @ wmat + b.data).reshape(bsz, h, wd, cout)
    if squeeze:
        out = out[0]

    def back(g):
        gd = g[None] if squeeze else g
        gmat = gd.reshape(bsz * h * wd, cout)
        dw = (cols2.T @ gmat).reshape(3, 3, cin, cout)
        db = gmat.sum(axis=0)
        dcols = (gmat @ wmat.T).reshape(bsz, h, wd, 9, cin)
        dxpad = np.zeros_like(xpad)
        for k in range(9):
            dy, dx = divmod(k, 3)
            dxpad[:, dy : dy + h, dx : dx + wd, :] += dcols[:, :, :, k, :]
        dx_full = dxpad[:, 1 : 1 + h, 1 : 1 + wd, :]
        return (dx_full[0] if squeeze else dx_full), dw, db

    return _node(out, (x, w, b), back, "conv3x3")


# -- losses -------------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets: Tensor, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy evaluated stably from logits.

    ``targets`` must be a constant tensor of the same shape with values in
    [0,1]; no gradient flows into it. ``pos_weight`` scales the positive
    terms, compensating heavy background/foreground imbalance.
    """
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"bce_with_logits: {logits.shape} vs {targets.shape}")
    if targets.requires_grad:
        raise ShapeMismatch("bce_with_logits: targets must not require gradients")
    if pos_weight <= 0:
        raise ShapeMismatch("bce_with_logits: pos_weight must be positive")
    z, y = logits.data, targets.data
    # per-entry: pos_weight*y*softplus(-z) + (1-y)*softplus(z), both stable
    tail = np.log1p(np.exp(-np.abs(z)))
    softplus_pos = np.maximum(z, 0.0) + tail
    softplus_neg = np.maximum(-z, 0.0) + tail
    per = pos_weight * y * softplus_neg + (1.0 - y) * softplus_pos
    n = z.size
    out = np.asarray(per.sum() / n)

    def back(g):
        s = np.empty_like(z)
        pos = z >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        s[~pos] = ez / (1.0 + ez)
        gs = float(np.asarray(g).reshape(-1)[0])
        return (gs * ((1.0 - y) * s - pos_weight * y * (1.0 - s)) / n, None)

    return _node(out, (logits, targets), back, "bce_with_logits")


# -- backward pass ------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode pass from a scalar loss.

    Accumulates into ``.grad`` of every reachable requires_grad leaf and
    returns a map of those leaves to the gradients contributed by this
    call. The graph is single-use: a second backward without re-running
    the forward pass raises GraphConsumed.
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    if any(n._consumed for n in order):
        raise GraphConsumed("backward called twice on the same graph; re-run the forward pass")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    contributed: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and node.is_leaf():
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            contributed[node] = g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            have = grads.get(id(p))
            if have is None:
                grads[id(p)] = pg.copy() if pg.base is not None or pg is g else pg
            else:
                have += pg
        node._consumed = True
        node._backward = None
    return contributed


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None

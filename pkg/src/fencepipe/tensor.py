"""Reverse-mode autodiff over numpy float64 arrays.

The engine is a tape of closures: every op returns a Tensor holding its
parents and a callable that maps the output gradient to per-parent
gradients. backward() walks the graph once in reverse topological order
and accumulates into .grad for tensors that require gradients, so calling
it twice without zeroing doubles the gradients exactly.

Array layout is channels-last throughout: images are [H, W, K], dense
vectors are 1-D. There is no batch axis; batching is done by the caller
accumulating gradients across samples.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, EmptyInputError, GraphError, NonFiniteError

LOG_EPS = 1e-12


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        if not np.isfinite(self.data).all():
            raise NonFiniteError("tensor created with NaN or infinite entries")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self) -> "Tensor":
        return tsum(self)

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(_as_array(other))
        return add(self, scale(other, -1.0))

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced NaN or infinite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents
    out._vjp = vjp
    return out


def _need(x, op: str, ndim: int | None = None) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.size == 0:
        raise EmptyInputError(f"{op}: empty input")
    if ndim is not None and x.data.ndim != ndim:
        raise DimensionError(f"{op}: expected {ndim}-d input, got shape {x.data.shape}")
    return x


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b) -> Tensor:
    a = _need(a, "add")
    if isinstance(b, Tensor) or isinstance(b, np.ndarray):
        b = _need(b, "add")
        if a.data.shape != b.data.shape:
            raise DimensionError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
        data = a.data + b.data
        return _make(data, (a, b), lambda g: (g, g), "add")
    c = float(b)
    return _make(a.data + c, (a,), lambda g: (g,), "add")


def mul(a: Tensor, b) -> Tensor:
    a = _need(a, "mul")
    if isinstance(b, Tensor) or isinstance(b, np.ndarray):
        b = _need(b, "mul")
        if a.data.shape != b.data.shape:
            raise DimensionError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
        ad, bd = a.data, b.data
        return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")
    return scale(a, float(b))


def scale(x: Tensor, c: float) -> Tensor:
    x = _need(x, "scale")
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,), "scale")


def tsum(x: Tensor) -> Tensor:
    """Sum of all entries, returned as a 0-d tensor."""
    x = _need(x, "sum")
    shape = x.data.shape
    return _make(
        np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def flatten(x: Tensor) -> Tensor:
    x = _need(x, "flatten")
    shape = x.data.shape
    return _make(x.data.reshape(-1).copy(), (x,), lambda g: (g.reshape(shape),), "flatten")


# ---------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    x = _need(x, "relu")
    # subgradient at 0 is taken as 0
    mask = x.data > 0.0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    x = _need(x, "sigmoid")
    d = x.data
    s = np.empty_like(d)
    pos = d >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    s[~pos] = e / (1.0 + e)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    x = _need(x, "softmax")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return ((g - dot) * s,)

    return _make(s, (x,), vjp, "softmax")


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "softmax": softmax}


def activate(x: Tensor, kind: str) -> Tensor:
    """Apply a named activation; kind 'none' is the identity."""
    if kind == "none":
        return _need(x, "activate")
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise GraphError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# structured ops


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: str = "same") -> Tensor:
    """3x3 convolution (cross-correlation) of [H,W,K] by [3,3,K,L] plus bias [L].

    padding 'same' zero-pads by one pixel on every side so the output keeps
    the input's spatial size; 'valid' shrinks each side by one.
    """
    x = _need(x, "conv2d", ndim=3)
    w = _need(w, "conv2d", ndim=4)
    b = _need(b, "conv2d", ndim=1)
    kh, kw, kin, kout = w.data.shape
    if (kh, kw) != (3, 3):
        raise DimensionError(f"conv2d: kernel must be 3x3, got {kh}x{kw}")
    if kin != x.data.shape[2]:
        raise DimensionError(
            f"conv2d: kernel expects {kin} input channels, image has {x.data.shape[2]}"
        )
    if b.data.shape != (kout,):
        raise DimensionError(f"conv2d: bias shape {b.data.shape} != ({kout},)")
    if padding not in ("same", "valid"):
        raise DimensionError(f"conv2d: padding must be 'same' or 'valid', got {padding!r}")
    hin, win = x.data.shape[:2]
    pad = 1 if padding == "same" else 0
    if pad:
        xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    else:
        if hin < 3 or win < 3:
            raise DimensionError(f"conv2d: input {hin}x{win} too small for valid padding")
        xp = x.data
    ho, wo = xp.shape[0] - 2, xp.shape[1] - 2
    wd = w.data
    out = np.zeros((ho, wo, kout))
    for i in range(3):
        for j in range(3):
            out += xp[i : i + ho, j : j + wo, :] @ wd[i, j]
    out += b.data

    def vjp(g):
        db = g.sum(axis=(0, 1))
        dw = np.empty_like(wd)
        dxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                patch = xp[i : i + ho, j : j + wo, :]
                dw[i, j] = np.tensordot(patch, g, axes=([0, 1], [0, 1]))
                dxp[i : i + ho, j : j + wo, :] += g @ wd[i, j].T
        dx = dxp[pad : pad + hin, pad : pad + win, :] if pad else dxp
        return (dx, dw, db)

    return _make(out, (x, w, b), vjp, "conv2d")


def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Pointwise convolution: per-pixel linear map [K]->[L]."""
    x = _need(x, "conv1x1", ndim=3)
    w = _need(w, "conv1x1", ndim=2)
    b = _need(b, "conv1x1", ndim=1)
    kin, kout = w.data.shape
    if kin != x.data.shape[2]:
        raise DimensionError(
            f"conv1x1: weight expects {kin} input channels, image has {x.data.shape[2]}"
        )
    if b.data.shape != (kout,):
        raise DimensionError(f"conv1x1: bias shape {b.data.shape} != ({kout},)")
    xd, wd = x.data, w.data
    out = xd @ wd + b.data

    def vjp(g):
        db = g.sum(axis=(0, 1))
        dw = np.tensordot(xd, g, axes=([0, 1], [0, 1]))
        dx = g @ wd.T
        return (dx, dw, db)

    return _make(out, (x, w, b), vjp, "conv1x1")


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2. Ties go to the first window cell in scan order."""
    x = _need(x, "maxpool2", ndim=3)
    h, w, k = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    ho, wo = h // 2, w // 2
    win = x.data.reshape(ho, 2, wo, 2, k).transpose(0, 2, 1, 3, 4).reshape(ho, wo, 4, k)
    idx = win.argmax(axis=2)  # argmax picks the first maximum: scan order
    out = np.take_along_axis(win, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def vjp(g):
        dwin = np.zeros((ho, wo, 4, k))
        np.put_along_axis(dwin, idx[:, :, None, :], g[:, :, None, :], axis=2)
        return (dwin.reshape(ho, wo, 2, 2, k).transpose(0, 2, 1, 3, 4).reshape(h, w, k),)

    return _make(out, (x,), vjp, "maxpool2")


def upconv2(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Transposed 2x2 convolution with stride 2: [H,W,K] -> [2H,2W,L].

    Output pixel (2x+i, 2y+j) sees exactly one input pixel, so the blocks
    are disjoint and the op is an exact inverse-style upsampling.
    """
    x = _need(x, "upconv2", ndim=3)
    w = _need(w, "upconv2", ndim=4)
    b = _need(b, "upconv2", ndim=1)
    kh, kw, kin, kout = w.data.shape
    if (kh, kw) != (2, 2):
        raise DimensionError(f"upconv2: kernel must be 2x2, got {kh}x{kw}")
    if kin != x.data.shape[2]:
        raise DimensionError(
            f"upconv2: kernel expects {kin} input channels, image has {x.data.shape[2]}"
        )
    if b.data.shape != (kout,):
        raise DimensionError(f"upconv2: bias shape {b.data.shape} != ({kout},)")
    h, wdim, _ = x.data.shape
    xd, wd = x.data, w.data
    # blocks[h, w, i, j, l] = sum_k x[h, w, k] * w[i, j, k, l]
    blocks = np.tensordot(xd, wd, axes=([2], [2]))
    out = blocks.transpose(0, 2, 1, 3, 4).reshape(2 * h, 2 * wdim, kout) + b.data

    def vjp(g):
        db = g.sum(axis=(0, 1))
        gb = g.reshape(h, 2, wdim, 2, kout).transpose(0, 2, 1, 3, 4)  # [h,w,i,j,l]
        dw = np.tensordot(xd, gb, axes=([0, 1], [0, 1]))  # [k,i,j,l]
        dx = np.tensordot(gb, wd, axes=([2, 3, 4], [0, 1, 3]))
        return (dx, dw.transpose(1, 2, 0, 3), db)

    return _make(out, (x, w, b), vjp, "upconv2")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two [H,W,*] maps along the channel axis."""
    a = _need(a, "concat_channels", ndim=3)
    b = _need(b, "concat_channels", ndim=3)
    if a.data.shape[:2] != b.data.shape[:2]:
        raise DimensionError(
            f"concat_channels: spatial mismatch {a.data.shape[:2]} vs {b.data.shape[:2]}"
        )
    ka = a.data.shape[2]
    out = np.concatenate([a.data, b.data], axis=2)
    return _make(out, (a, b), lambda g: (g[:, :, :ka], g[:, :, ka:]), "concat_channels")


def crop_center(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Center-crop a [H,W,K] map to out_h x out_w (used by valid-padding skips)."""
    x = _need(x, "crop_center", ndim=3)
    h, w, k = x.data.shape
    if out_h > h or out_w > w or out_h <= 0 or out_w <= 0:
        raise DimensionError(f"crop_center: cannot crop {h}x{w} to {out_h}x{out_w}")
    r0 = (h - out_h) // 2
    c0 = (w - out_w) // 2
    out = x.data[r0 : r0 + out_h, c0 : c0 + out_w, :].copy()

    def vjp(g):
        dx = np.zeros((h, w, k))
        dx[r0 : r0 + out_h, c0 : c0 + out_w, :] = g
        return (dx,)

    return _make(out, (x,), vjp, "crop_center")


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully connected layer: [N] @ [N,M] + [M]."""
    x = _need(x, "dense", ndim=1)
    w = _need(w, "dense", ndim=2)
    b = _need(b, "dense", ndim=1)
    n, m = w.data.shape
    if x.data.shape != (n,):
        raise DimensionError(f"dense: input shape {x.data.shape} != ({n},)")
    if b.data.shape != (m,):
        raise DimensionError(f"dense: bias shape {b.data.shape} != ({m},)")
    xd, wd = x.data, w.data
    out = xd @ wd + b.data

    def vjp(g):
        return (wd @ g, np.outer(xd, g), g)

    return _make(out, (x, w, b), vjp, "dense")


# ---------------------------------------------------------------------------
# losses


def _loss_pair(pred, target, op: str) -> tuple[Tensor, Tensor]:
    pred = _need(pred, op)
    if not isinstance(target, Tensor):
        target = Tensor(target)
    target = _need(target, op)
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"{op}: prediction shape {pred.data.shape} != target shape {target.data.shape}"
        )
    return pred, target


def cross_entropy_loss(pred: Tensor, target) -> Tensor:
    """-sum(y * log p) with p clamped below at 1e-12."""
    pred, target = _loss_pair(pred, target, "cross_entropy_loss")
    p, y = pred.data, target.data
    pc = np.maximum(p, LOG_EPS)
    logp = np.log(pc)
    val = -np.sum(y * logp)

    def vjp(g):
        gs = float(g)
        live = p >= LOG_EPS  # clamp kills the gradient below the floor
        dp = -gs * (y / pc) * live
        dy = -gs * logp
        return (dp, dy)

    return _make(np.asarray(val), (pred, target), vjp, "cross_entropy_loss")


def binary_cross_entropy_loss(pred: Tensor, target) -> Tensor:
    """-sum(y log p + (1-y) log(1-p)), both logs clamped at 1e-12."""
    pred, target = _loss_pair(pred, target, "binary_cross_entropy_loss")
    p, y = pred.data, target.data
    pc = np.maximum(p, LOG_EPS)
    qc = np.maximum(1.0 - p, LOG_EPS)
    logp, logq = np.log(pc), np.log(qc)
    val = -np.sum(y * logp + (1.0 - y) * logq)

    def vjp(g):
        gs = float(g)
        dp = -gs * ((y / pc) * (p >= LOG_EPS) - ((1.0 - y) / qc) * ((1.0 - p) >= LOG_EPS))
        dy = -gs * (logp - logq)
        return (dp, dy)

    return _make(np.asarray(val), (pred, target), vjp, "binary_cross_entropy_loss")


def soft_dice_loss(pred: Tensor, target, smooth: float = 1.0) -> Tensor:
    """Negative soft Dice: -(2*sum(p*g) + smooth) / (sum(p) + sum(g) + smooth).

    Perfect overlap tends to -1; the optimizer minimises, so more negative
    is better. smooth keeps the ratio defined on empty masks.
    """
    pred, target = _loss_pair(pred, target, "soft_dice_loss")
    p, y = pred.data, target.data
    num = 2.0 * np.sum(p * y) + smooth
    den = np.sum(p) + np.sum(y) + smooth
    val = -num / den

    def vjp(g):
        gs = float(g)
        dp = -gs * (2.0 * y * den - num) / (den * den)
        dy = -gs * (2.0 * p * den - num) / (den * den)
        return (dp, dy)

    return _make(np.asarray(val), (pred, target), vjp, "soft_dice_loss")


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def _toposort(root: Tensor) -> list[Tensor]:
    """Nodes in reverse topological order (root first). Raises GraphError on cycles."""
    order: list[Tensor] = []
    done: set[int] = set()
    onstack: set[int] = set()
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i == 0:
            if id(node) in done:
                continue
            if id(node) in onstack:
                raise GraphError("cycle detected in autodiff graph")
            onstack.add(id(node))
        if i < len(node._parents):
            stack.append((node, i + 1))
            child = node._parents[i]
            if id(child) not in done:
                stack.append((child, 0))
        else:
            onstack.discard(id(node))
            done.add(id(node))
            order.append(node)
    order.reverse()
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad for every tensor with requires_grad."""
    if root.data.size != 1:
        raise DimensionError(f"backward: root must be scalar, got shape {root.data.shape}")
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in _toposort(root):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            have = grads.get(id(parent))
            grads[id(parent)] = pg if have is None else have + pg


def grad_check(f, xs, h: float = 1e-5) -> float:
    """Compare analytic gradients of scalar f(*xs) against central differences.

    xs is a sequence of arrays or Tensors; every one is treated as
    differentiable. Returns the worst relative error over all input entries,
    with |analytic - numeric| / max(1, |analytic|) as the measure so tiny
    gradients are compared absolutely.
    """
    tensors: list[Tensor] = []
    for x in xs:
        t = x if isinstance(x, Tensor) else Tensor(x)
        t.requires_grad = True
        t.grad = None
        tensors.append(t)
    out = f(*tensors)
    if out.data.size != 1:
        raise DimensionError(f"grad_check: f must return a scalar, got {out.data.shape}")
    backward(out)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = float(f(*tensors).data)
            flat[i] = keep - h
            fm = float(f(*tensors).data)
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            if err > worst:
                worst = err
    return worst

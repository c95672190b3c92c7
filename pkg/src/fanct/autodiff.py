"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray value and remembers how it was produced:
its parent tensors and a vector-Jacobian-product closure.  Calling
``backward()`` on a result topologically sorts the tape and accumulates
gradients into every tensor's ``grad``.  Repeated backward calls through
shared leaves accumulate, which is how minibatch gradients are summed.

The operation set is exactly what the unrolled reconstruction network
needs: broadcast arithmetic, ReLU, same-padded convolution, per-channel
affine scaling, 2x2 average pooling and nearest upsampling, soft
shrinkage with a differentiable threshold, application of constant
linear operators with known transposes, and mean-squared-error loss.

Gradient recording can be suspended with the ``no_grad`` context
manager, in which case operations compute values only.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .linops import LinearOperator

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "relu",
    "conv2d",
    "channel_affine",
    "avg_pool2",
    "upsample_nearest2",
    "soft_shrink",
    "apply_linear",
    "reshape",
    "mse",
]

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (values still computed)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Array node of the reverse-mode tape."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents: tuple = (), vjp=None):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        if _grad_enabled:
            self._parents = parents
            self._vjp = vjp
        else:
            self._parents = ()
            self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``grad``.

        The seed gradient is all ones, so call this on scalar losses.
        """
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))

        if self.grad is None:
            self.grad = np.ones_like(self.value)
        else:
            self.grad = self.grad + np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes numpy broadcasting expanded to reach its shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return Tensor(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)

    return Tensor(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.value * b.value

    def vjp(g):
        return (_unbroadcast(g * b.value, a.value.shape),
                _unbroadcast(g * a.value, b.value.shape))

    return Tensor(out, (a, b), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0

    def vjp(g):
        return (g * mask,)

    return Tensor(np.where(mask, x.value, 0.0), (x,), vjp)


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 2-D convolution: x (C,H,W), w (O,C,k,k) odd k, b (O,).

    Implemented as an im2col matrix product; the backward pass
    re-materializes the column matrix from the saved padded input, so
    the tape holds one padded copy of the activation per layer.
    """
    xv, wv, bv = x.value, w.value, b.value
    n_out, n_in, k, k2 = wv.shape
    if k != k2 or k % 2 != 1:
        raise ValueError("kernel must be square with odd size")
    if xv.ndim != 3 or xv.shape[0] != n_in:
        raise ValueError(f"input shape {xv.shape} does not match kernel "
                         f"input channels {n_in}")
    pad = (k - 1) // 2
    h, wd = xv.shape[1], xv.shape[2]
    xp = np.pad(xv, ((0, 0), (pad, pad), (pad, pad)))

    def im2col(arr):
        win = sliding_window_view(arr, (k, k), axis=(1, 2))
        return np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(
            h * wd, n_in * k * k)

    cols = im2col(xp)
    wm = wv.reshape(n_out, -1)
    out = (cols @ wm.T + bv[None, :]).T.reshape(n_out, h, wd)

    def vjp(g):
        gm = np.ascontiguousarray(g.reshape(n_out, h * wd))
        gb = g.sum(axis=(1, 2))
        cols_b = im2col(xp)
        gw = (gm @ cols_b).reshape(wv.shape)
        gcols = gm.T @ wm
        g6 = gcols.reshape(h, wd, n_in, k, k)
        gxp = np.zeros_like(xp)
        for u in range(k):
            for v in range(k):
                gxp[:, u:u + h, v:v + wd] += g6[:, :, :, u, v].transpose(2, 0, 1)
        gx = gxp[:, pad:pad + h, pad:pad + wd]
        return gx, gw, gb

    return Tensor(out, (x, w, b), vjp)


def channel_affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel scale and shift on (C,H,W), the normalization stand-in."""
    s = scale.value[:, None, None]
    out = x.value * s + shift.value[:, None, None]

    def vjp(g):
        return (g * s,
                (g * x.value).sum(axis=(1, 2)),
                g.sum(axis=(1, 2)))

    return Tensor(out, (x, scale, shift), vjp)


def avg_pool2(x: Tensor) -> Tensor:
    c, h, w = x.value.shape
    if h % 2 or w % 2:
        raise ValueError("spatial dims must be even for 2x2 pooling")
    out = x.value.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def vjp(g):
        gx = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
        return (gx,)

    return Tensor(out, (x,), vjp)


def upsample_nearest2(x: Tensor) -> Tensor:
    c, h, w = x.value.shape
    out = np.repeat(np.repeat(x.value, 2, axis=1), 2, axis=2)

    def vjp(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return Tensor(out, (x,), vjp)


def soft_shrink(x: Tensor, threshold) -> Tensor:
    """Elementwise sign(x) * max(|x| - t, 0) with differentiable threshold.

    The threshold may be a scalar Tensor (its gradient is
    -sum(sign(x) * g) over the surviving entries) or a plain float.
    """
    t = threshold if isinstance(threshold, Tensor) else Tensor(np.asarray(threshold))
    tv = float(t.value)
    if tv < 0:
        raise ValueError("threshold must be nonnegative")
    xv = x.value
    out = np.sign(xv) * np.maximum(np.abs(xv) - tv, 0.0)
    mask = np.abs(xv) > tv

    def vjp(g):
        gx = g * mask
        gt = np.asarray(-np.sum(g * np.sign(xv) * mask), dtype=t.value.dtype)
        return gx, gt.reshape(t.value.shape)

    return Tensor(out, (x, t), vjp)


def apply_linear(op: LinearOperator, x: Tensor) -> Tensor:
    """Apply a constant linear operator; backward uses its exact transpose.

    Results are cast back to the input dtype so single-precision tapes
    stay single precision even when the operator computes in double.
    """
    out = op.apply(x.value)
    if out.dtype != x.value.dtype:
        out = out.astype(x.value.dtype)

    def vjp(g):
        gt = op.apply_transpose(g)
        if gt.dtype != g.dtype:
            gt = gt.astype(g.dtype)
        return (gt,)

    return Tensor(out, (x,), vjp)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.value.shape

    def vjp(g):
        return (g.reshape(old),)

    return Tensor(x.value.reshape(shape), (x,), vjp)


def mse(x: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target; returns a scalar tensor."""
    target = np.asarray(target, dtype=x.value.dtype)
    if target.shape != x.value.shape:
        raise ValueError(f"target shape {target.shape} does not match "
                         f"{x.value.shape}")
    diff = x.value - target
    out = np.asarray(np.mean(diff * diff))

    def vjp(g):
        return (g * (2.0 / diff.size) * diff,)

    return Tensor(out, (x,), vjp)

"""A small reverse-mode differentiation engine over float64 numpy arrays.

Each ``Tensor`` records the tensors it was computed from and a closure mapping
the gradient of the output to gradients of those inputs.  ``Tensor.backward``
sorts the recorded graph topologically and visits every node once, in reverse.
Only first derivatives are supported.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: Sequence["Tensor"] = (),
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward

    # construction helpers
    @staticmethod
    def _result(value: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        if any(p.requires_grad for p in parents):
            return Tensor(value, True, parents, backward)
        return Tensor(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires it."""
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# elementwise binary ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)
    return Tensor._result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)
    return Tensor._result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return Tensor._result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                unbroadcast(-g * a.data / b.data ** 2, b.shape) if b.requires_grad else None)
    return Tensor._result(a.data / b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb
    return Tensor._result(a.data @ b.data, (a, b), backward)


def dense(x, W, b=None) -> Tensor:
    """Affine map ``W x + b`` applied along the last axis of ``x``; ``W`` is (out, in)."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ValueError(f"dense shape mismatch: x {x.shape}, W {W.shape}")
    if b is not None and as_tensor(b).shape != (W.shape[0],):
        raise ValueError(f"dense bias must have shape ({W.shape[0]},)")
    xd = x.data
    flat = xd.reshape(-1, xd.shape[-1])
    out = (flat @ W.data.T).reshape(xd.shape[:-1] + (W.shape[0],))
    parents: tuple[Tensor, ...] = (x, W)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
        parents = (x, W, b)

    def backward(g):
        gf = g.reshape(-1, g.shape[-1])
        gx = (gf @ W.data).reshape(xd.shape) if x.requires_grad else None
        gW = gf.T @ flat if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, gf.sum(axis=0)
    return Tensor._result(out, parents, backward)


# shape ops

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x: Tensor, index) -> Tensor:
    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)
    return Tensor._result(x.data[index], (x,), backward)


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis`` with an index array of any shape (as ``np.take``).

    Repeated indices accumulate gradient.
    """
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % x.ndim
    flat_shape = x.shape[:axis] + (indices.size,) + x.shape[axis + 1:]

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(np.moveaxis(out, axis, 0), indices.ravel(),
                  np.moveaxis(g.reshape(flat_shape), axis, 0))
        return (out,)
    return Tensor._result(np.take(x.data, indices, axis=axis), (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return Tensor._result(np.concatenate([t.data for t in xs], axis=axis), xs,
                          lambda g: tuple(np.split(g, sizes, axis=axis)))


# reductions

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return Tensor._result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    if count == 0:
        raise ValueError("mean over an empty axis")

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)
    return Tensor._result(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


mean_pool = mean


# nonlinearities

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor._result(s, (x,), lambda g: (g * s * (1.0 - s),))


def swish(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor._result(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return Tensor._result(t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return Tensor._result(e, (x,), lambda g: (g * e,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)
    return Tensor._result(s, (x,), backward)


def layernorm(x: Tensor, axes: Sequence[int], gamma: Tensor | None = None,
              beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise over ``axes`` then apply the broadcast affine ``gamma * xhat + beta``."""
    axes = tuple(a % x.ndim for a in axes)
    n = int(np.prod([x.shape[a] for a in axes]))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=axes, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat
    parents: list[Tensor] = [x]
    if gamma is not None:
        out = out * gamma.data
        parents.append(gamma)
    if beta is not None:
        out = out + beta.data
        parents.append(beta)

    def backward(g):
        dxhat = g * gamma.data if gamma is not None else g
        gx = None
        if x.requires_grad:
            gx = inv / n * (n * dxhat - dxhat.sum(axis=axes, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append(unbroadcast(g * xhat, gamma.shape))
        if beta is not None:
            grads.append(unbroadcast(g, beta.shape))
        return grads
    return Tensor._result(out, parents, backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool,
            channel_axis: int = 1) -> Tensor:
    """Zero whole channels with probability ``p`` and rescale survivors by ``1/(1-p)``.

    The mask covers the batch axis (if any) and ``channel_axis``; it is held
    constant for the backward pass.
    """
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an RNG")
    channel_axis %= x.ndim
    mask_shape = [1] * x.ndim
    mask_shape[channel_axis] = x.shape[channel_axis]
    if channel_axis > 0:
        mask_shape[0] = x.shape[0]
    keep = (rng.random(mask_shape) >= p).astype(DTYPE) / (1.0 - p)
    return mul(x, Tensor(keep))


FFT_MIN_KERNEL = 9


def conv1d(x, k, stride: int = 1, padding: int = 0, method: str = "auto") -> Tensor:
    """Cross-correlation of ``x`` (C_in, L) or (B, C_in, L) with ``k`` (C_out, C_in, K).

    ``method`` selects im2col ("direct") or FFT correlation ("fft"); "auto" picks
    FFT for kernels of ``FFT_MIN_KERNEL`` taps or more.  Both give the same
    values up to round-off.
    """
    x, k = as_tensor(x), as_tensor(k)
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    single = x.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3 or k.ndim != 3:
        raise ValueError(f"conv1d expects x (B, C, L) and k (O, C, K); got {x.shape}, {k.shape}")
    B, C, L = xd.shape
    O, Ck, K = k.shape
    if Ck != C:
        raise ValueError(f"conv1d channel mismatch: input {C}, kernel {Ck}")
    Lp = L + 2 * padding
    if K > Lp:
        raise ValueError(f"kernel length {K} exceeds padded input length {Lp}")
    if method == "auto":
        method = "fft" if K >= FFT_MIN_KERNEL else "direct"
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    impl = _conv1d_fft if method == "fft" else _conv1d_direct
    out, back = impl(xp, k.data, stride, x.requires_grad, k.requires_grad)
    if single:
        out = out[0]

    def backward(g):
        gxp, gk = back(g[None] if single else g)
        gx = None
        if gxp is not None:
            gx = gxp[:, :, padding:padding + L]
            if single:
                gx = gx[0]
        return gx, gk
    return Tensor._result(out, (x, k), backward)


def _conv1d_direct(xp, kd, stride, need_x, need_k):
    B, C, Lp = xp.shape
    O, _, K = kd.shape
    Lout = (Lp - K) // stride + 1
    win = sliding_window_view(xp, K, axis=2)[:, :, ::stride][:, :, :Lout]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * Lout, C * K)
    kmat = kd.reshape(O, C * K)
    out = np.ascontiguousarray((cols @ kmat.T).reshape(B, Lout, O).transpose(0, 2, 1))

    def back(g):
        gm = g.transpose(0, 2, 1).reshape(B * Lout, O)
        gk = (gm.T @ cols).reshape(O, C, K) if need_k else None
        gxp = None
        if need_x:
            dcols = (gm @ kmat).reshape(B, Lout, C, K)
            gxp = np.zeros((B, C, Lp))
            for i in range(Lout):
                gxp[:, :, i * stride:i * stride + K] += dcols[:, i]
        return gxp, gk
    return out, back


def _fast_length(n: int) -> int:
    """Smallest 5-smooth integer >= n."""
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def _conv1d_fft(xp, kd, stride, need_x, need_k):
    # circular correlation of length >= Lp has no wrap-around for outputs 0..Lp-K
    B, C, Lp0 = xp.shape
    O, _, K = kd.shape
    Lout = (Lp0 - K) // stride + 1
    Lp = _fast_length(Lp0)
    X = np.fft.rfft(xp, Lp, axis=-1).transpose(2, 0, 1)          # (F, B, C)
    Kf = np.fft.rfft(kd, Lp, axis=-1).transpose(2, 1, 0)         # (F, C, O)
    Y = X @ Kf.conj()                                             # (F, B, O)
    full = np.fft.irfft(Y.transpose(1, 2, 0), Lp, axis=-1)
    out = np.ascontiguousarray(full[:, :, :(Lout - 1) * stride + 1:stride])

    def back(g):
        gfull = np.zeros((B, O, Lp))
        gfull[:, :, :(Lout - 1) * stride + 1:stride] = g
        G = np.fft.rfft(gfull, axis=-1).transpose(2, 0, 1)        # (F, B, O)
        gk = gxp = None
        if need_k:
            dK = X.conj().transpose(0, 2, 1) @ G                  # (F, C, O)
            gk = np.fft.irfft(dK.conj().transpose(2, 1, 0), Lp, axis=-1)[:, :, :K]
        if need_x:
            dX = G @ Kf.transpose(0, 2, 1)                        # (F, B, C)
            gxp = np.fft.irfft(dX.transpose(1, 2, 0), Lp, axis=-1)[:, :, :Lp0]
        return gxp, gk
    return out, back

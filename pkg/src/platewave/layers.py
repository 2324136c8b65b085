"""Group-structured layers: lifting and regular D4 convolutions fused with a time convolution.

Feature layouts (batch axis optional and leading):

* adjacency input ``(C, 4, 4, T)`` with axes (channel, receiver, sender, time)
* group features ``(C, 8, T)`` with axes (channel, group element, time)

Both convolutions expand their kernel into an ordinary 1D convolution kernel by
gathering entries with the group's index tables, so equivariance holds by
construction and gradients flow through the gather.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import dihedral as d4
from .autodiff import Tensor

_INV_CORNER = d4.CORNER_MAP[d4.INVERSE]          # [g, k] -> g^-1(k)
# LIFT_INDEX[sigma, 4 r + s] = 4 sigma^-1(r) + sigma^-1(s)
LIFT_INDEX = (4 * _INV_CORNER[:, :, None] + _INV_CORNER[:, None, :]).reshape(8, 16)
# GROUP_INDEX[sigma, pi] = sigma^-1 pi
GROUP_INDEX = d4.CAYLEY[d4.INVERSE]


def symmetry_weights(raw) -> Tensor:
    """omega = 8 * softmax(raw / 8); positive, sums to 8, all ones at raw = 0."""
    raw = ad.as_tensor(raw)
    return ad.softmax(raw * 0.125, axis=-1) * 8.0


def expand_lift_kernel(K: Tensor) -> Tensor:
    """(O, C, 4, 4, Kt) -> (O*8, C*16, Kt) with rows ordered (o, sigma)."""
    O, C, _, _, Kt = K.shape
    flat = K.reshape(O, C, 16, Kt)
    gathered = ad.take(flat, LIFT_INDEX, axis=2)         # (O, C, 8, 16, Kt)
    return gathered.transpose(0, 2, 1, 3, 4).reshape(O * 8, C * 16, Kt)


def expand_group_kernel(K: Tensor) -> Tensor:
    """(O, C, 8, Kt) -> (O*8, C*8, Kt) with entry [(o, sigma), (c, pi)] = K[o, c, sigma^-1 pi]."""
    O, C, _, Kt = K.shape
    gathered = ad.take(K, GROUP_INDEX, axis=2)           # (O, C, 8, 8, Kt)
    return gathered.transpose(0, 2, 1, 3, 4).reshape(O * 8, C * 8, Kt)


def _batched(x: Tensor, core_ndim: int) -> tuple[Tensor, bool]:
    if x.ndim == core_ndim:
        return x.reshape((1,) + x.shape), True
    if x.ndim != core_ndim + 1:
        raise ValueError(f"expected {core_ndim} or {core_ndim + 1} axes, got shape {x.shape}")
    return x, False


def _apply_omega(out: Tensor, omega: Tensor | None) -> Tensor:
    if omega is None:
        return out
    return out * omega.reshape(1, 1, 8, 1)


def lift(V, K: Tensor, stride: int = 1, padding: int = 0, omega: Tensor | None = None) -> Tensor:
    """Lifting convolution: adjacency signal (C_in, 4, 4, T) -> group features (C_out, 8, T')."""
    V = ad.as_tensor(V)
    V, single = _batched(V, 4)
    B, C, nr, ns, T = V.shape
    if (nr, ns) != (4, 4) or K.ndim != 5 or K.shape[1:4] != (C, 4, 4):
        raise ValueError(f"lift shape mismatch: V {V.shape}, K {K.shape}")
    O = K.shape[0]
    out = ad.conv1d(V.reshape(B, C * 16, T), expand_lift_kernel(K), stride, padding)
    out = _apply_omega(out.reshape(B, O, 8, out.shape[-1]), omega)
    return out.reshape(out.shape[1:]) if single else out


def group_conv(F, K: Tensor, stride: int = 1, padding: int = 0, omega: Tensor | None = None) -> Tensor:
    """Regular D4 convolution ``out_sigma = sum_pi K(sigma^-1 pi) F_pi`` fused with a time convolution."""
    F = ad.as_tensor(F)
    F, single = _batched(F, 3)
    B, C, n, T = F.shape
    if n != 8 or K.ndim != 4 or K.shape[1:3] != (C, 8):
        raise ValueError(f"group_conv shape mismatch: F {F.shape}, K {K.shape}")
    O = K.shape[0]
    out = ad.conv1d(F.reshape(B, C * 8, T), expand_group_kernel(K), stride, padding)
    out = _apply_omega(out.reshape(B, O, 8, out.shape[-1]), omega)
    return out.reshape(out.shape[1:]) if single else out


def approx_group_conv(F, K: Tensor, raw_weights, stride: int = 1, padding: int = 0) -> Tensor:
    return group_conv(F, K, stride, padding, omega=symmetry_weights(raw_weights))


# VECTOR_READOUT[i, 8 j + sigma] = R_sigma[i, j]
VECTOR_READOUT = np.ascontiguousarray(d4.VECTOR_REP.transpose(1, 2, 0).reshape(2, 16))


def vector_head(F, omega: Tensor | None = None) -> Tensor:
    """Contract (..., 2, 8) features with the 2x2 group matrices: v = sum_sigma R_sigma F_sigma."""
    F = ad.as_tensor(F)
    if F.ndim >= 3 and F.shape[-1] == 1 and F.shape[-2] == 8:
        F = F.reshape(F.shape[:-1])
    if F.shape[-2:] != (2, 8):
        raise ValueError(f"vector_head needs a channel axis of size 2 and a group axis of 8, got {F.shape}")
    if omega is not None:
        F = F * omega
    flat = F.reshape(F.shape[:-2] + (16,))
    return ad.dense(flat, Tensor(VECTOR_READOUT))


def group_pool(F, omega: Tensor | None = None) -> Tensor:
    """Mean over the group axis of (..., C, 8, T) features."""
    F = ad.as_tensor(F)
    if F.shape[-2] != 8:
        raise ValueError(f"group axis must have length 8, got shape {F.shape}")
    if omega is not None:
        F = F * omega.reshape(8, 1)
    return F.mean(axis=-2)


def scalar_head(F, W: Tensor, b: Tensor | None = None, omega: Tensor | None = None) -> Tensor:
    """Group-invariant logit: pool (..., C, 8, T) over the group, then dense over (C, T) to one value."""
    pooled = group_pool(F, omega)
    flat = pooled.reshape(pooled.shape[:-2] + (pooled.shape[-2] * pooled.shape[-1],))
    out = ad.dense(flat, W, b)
    return out.reshape(out.shape[:-1])


def averaging_matrix(length: int, size: int, stride: int, padding: int) -> np.ndarray:
    """(L_out, L) matrix of a zero-padded moving average of width ``size``."""
    L_out = (length + 2 * padding - size) // stride + 1
    A = np.zeros((L_out, length))
    for i in range(L_out):
        lo = i * stride - padding
        A[i, max(lo, 0):min(lo + size, length)] = 1.0 / size
    return A


def average_downsample(x: Tensor, c_out: int, size: int, stride: int, padding: int) -> Tensor:
    """Fixed skip path: moving average of width ``size`` along time, per channel.

    ``x`` is (B, C, L) or (B, C, 8, L).  Channels pass through one-to-one when
    ``c_out`` equals C; otherwise every output channel receives the channel mean.
    """
    A = averaging_matrix(x.shape[-1], size, stride, padding)
    out = ad.matmul(x, Tensor(A.T))
    C = x.shape[1]
    if c_out == C:
        return out
    mixed = out.mean(axis=1, keepdims=True)
    return mixed * Tensor(np.ones((1, c_out) + (1,) * (x.ndim - 2)))

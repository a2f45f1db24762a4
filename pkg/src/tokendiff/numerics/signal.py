"""Causal depthwise convolution over [batch, channel, position] tensors."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _apply


def causal_depthwise_conv(x: Tensor, k: Tensor) -> Tensor:
    """y[b,d,n] = sum_j k[d,j] * x[b,d,n-j], out-of-range terms zero.

    Equivalent to left-padding with K-1 zeros: position n sees inputs <= n
    only.  Differentiable in both x and k.
    """
    if x.ndim != 3:
        raise ValueError(f"conv input must be [B, D, N], got shape {x.shape}")
    if k.ndim != 2:
        raise ValueError(f"conv kernel must be [D, K], got shape {k.shape}")
    if k.shape[0] != x.shape[1]:
        raise ValueError(f"channel mismatch: input D={x.shape[1]}, kernel D={k.shape[0]}")
    n = x.shape[-1]
    taps = k.shape[-1]
    if taps == 0:
        raise ValueError("conv kernel must have at least one tap")
    if taps > n:
        raise ValueError(f"kernel length {taps} exceeds sequence length {n}")

    xd, kd = x.data, k.data
    win = np.lib.stride_tricks.sliding_window_view
    xpad = np.pad(xd, ((0, 0), (0, 0), (taps - 1, 0)))
    xw = win(xpad, taps, axis=-1)  # xw[b,d,n,j] = x[b,d,n-(taps-1)+j], zero-padded
    y = np.einsum("bdnj,dj->bdn", xw, kd[:, ::-1])

    def back(g):
        gpad = np.pad(g, ((0, 0), (0, 0), (0, taps - 1)))
        gx = np.einsum("bdnj,dj->bdn", win(gpad, taps, axis=-1), kd)
        gk = np.einsum("bdnj,bdn->dj", xw, g)[:, ::-1]
        return (gx, gk)

    return _apply((x, k), y, back)

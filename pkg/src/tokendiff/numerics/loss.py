"""Softmax cross-entropy over [batch, position, vocab] logits."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _apply


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy over all batch*position slots, max-stabilized.

    Gradient w.r.t. logits is (softmax - one_hot) / (B*N).
    """
    if logits.ndim != 3:
        raise ValueError(f"logits must be [B, N, V], got shape {logits.shape}")
    targets = np.asarray(targets)
    if not np.issubdtype(targets.dtype, np.integer):
        raise ValueError("targets must be integer token ids")
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} != logits {logits.shape[:-1]}")
    v = logits.shape[-1]
    if targets.min() < 0 or targets.max() >= v:
        raise ValueError(f"target id out of range [0, {v})")
    z = logits.data
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite values")

    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=-1, keepdims=True)
    lse = zmax + np.log(sez)  # [B, N, 1]
    b, n = targets.shape
    picked = np.take_along_axis(z, targets[..., None], axis=-1)
    out = np.float64((lse - picked).sum() / (b * n))

    def back(g):
        p = ez / sez
        grad = p.copy()
        bi, ni = np.meshgrid(np.arange(b), np.arange(n), indexing="ij")
        grad[bi, ni, targets] -= 1.0
        return (grad * (float(g) / (b * n)),)

    return _apply((logits,), out, back)

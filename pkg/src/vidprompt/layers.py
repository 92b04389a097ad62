"""Frozen transformer building blocks shared by both towers and the prompt path."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import diffkernel as dk
from .diffkernel import Tensor

Params = Mapping[str, Tensor]


def linear(x: Tensor, params: Params, prefix: str) -> Tensor:
    return dk.add(dk.matmul(x, params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def layer_norm(x: Tensor, params: Params, prefix: str) -> Tensor:
    return dk.add(dk.mul(dk.layernorm(x), params[f"{prefix}.weight"]), params[f"{prefix}.bias"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, seq, width = x.shape
    x = dk.reshape(x, (*lead, seq, heads, width // heads))
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n, n + 2)
    return dk.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, seq, dh = x.shape
    n = len(lead)
    axes = tuple(range(n)) + (n + 1, n, n + 2)
    x = dk.transpose(x, axes)
    return dk.reshape(x, (*lead, seq, heads * dh))


def multi_head_attention(x: Tensor, params: Params, prefix: str, heads: int, mask: np.ndarray | None = None) -> Tensor:
    """Self-attention over axis -2 of ``x``.

    ``mask`` is an additive (seq, seq) array, e.g. a causal mask of 0 / -1e9.
    """
    width = x.shape[-1]
    if width % heads:
        raise dk.ShapeError(f"width {width} not divisible by {heads} heads")
    qkv = linear(x, params, f"{prefix}.qkv")
    q = _split_heads(qkv[..., 0:width], heads)
    k = _split_heads(qkv[..., width : 2 * width], heads)
    v = _split_heads(qkv[..., 2 * width : 3 * width], heads)
    nd = k.ndim
    kt = dk.transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2))
    scores = dk.scale(dk.matmul(q, kt), 1.0 / np.sqrt(width // heads))
    if mask is not None:
        scores = dk.add(scores, mask.astype(scores.dtype))
    attn = dk.softmax(scores, axis=-1)
    out = _merge_heads(dk.matmul(attn, v))
    return linear(out, params, f"{prefix}.out")


def mlp(x: Tensor, params: Params, prefix: str) -> Tensor:
    return linear(dk.gelu(linear(x, params, f"{prefix}.fc")), params, f"{prefix}.proj")


def causal_mask(seq: int) -> np.ndarray:
    return np.triu(np.full((seq, seq), -1e9), k=1)

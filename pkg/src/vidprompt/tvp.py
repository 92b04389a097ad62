"""Temporal visual prompts: one learnable token per (layer, frame).

At layer ``l`` the prompt of frame ``t`` absorbs the mean token of that frame,
the T prompts then attend to one another through layer ``l``'s frozen
attention, and each result is appended to its frame as an extra token.
"""

from __future__ import annotations

import numpy as np

from . import diffkernel as dk
from .diffkernel import Tensor
from .layers import Params, layer_norm, multi_head_attention

PROMPT_KEY = "tvp.prompts"
PROMPT_INIT_STD = 0.02


def init_prompt_bank(layers: int, frames: int, width: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    return (PROMPT_INIT_STD * rng.standard_normal((layers, frames, width))).astype(dtype)


def prompt_param_count(layers: int, frames: int, width: int) -> int:
    return layers * frames * width


def associate(prompts: Tensor, tokens: Tensor) -> Tensor:
    """prompts (T, D) plus the row-mean of each frame's tokens (..., T, N+1, D)."""
    if tokens.shape[-3] != prompts.shape[-2]:
        raise dk.ShapeError(f"prompt bank has {prompts.shape[-2]} frames, video has {tokens.shape[-3]}")
    if tokens.shape[-1] != prompts.shape[-1]:
        raise dk.ShapeError(f"prompt width {prompts.shape[-1]} != token width {tokens.shape[-1]}")
    return dk.add(prompts, dk.mean(tokens, axis=-2))


def temporal_attend(prompts: Tensor, params: Params, layer_prefix: str, heads: int) -> Tensor:
    """MHA(LN(prompts)) over the frame axis, reusing the block's frozen weights; no residual."""
    return multi_head_attention(layer_norm(prompts, params, f"{layer_prefix}.ln1"), params, f"{layer_prefix}.attn", heads)


def inject(prompts: Tensor, tokens: Tensor) -> Tensor:
    """Append prompt (..., T, D) as the last row of tokens (..., T, N+1, D)."""
    if prompts.shape[-1] != tokens.shape[-1]:
        raise dk.ShapeError(f"prompt width {prompts.shape[-1]} != token width {tokens.shape[-1]}")
    row = dk.reshape(prompts, (*prompts.shape[:-1], 1, prompts.shape[-1]))
    return dk.concat([tokens, row], axis=-2)

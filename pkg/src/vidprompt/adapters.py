"""Bottleneck adapters and tag-wise parameter accounting."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import diffkernel as dk
from .diffkernel import Tensor

TAGS = ("frozen", "prompt", "visual-adapter", "text-adapter", "cls-token")


def hidden_width(width: int, ratio: int) -> int:
    return width // ratio


def adapter_shapes(width: int, ratio: int) -> dict[str, tuple[int, ...]]:
    h = hidden_width(width, ratio)
    return {
        "down.weight": (width, h),
        "down.bias": (h,),
        "up.weight": (h, width),
        "up.bias": (width,),
    }


def init_adapter(width: int, ratio: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """Down projection random, up projection zero: the adapter starts as the identity."""
    h = hidden_width(width, ratio)
    return {
        "down.weight": (rng.standard_normal((width, h)) / np.sqrt(width)).astype(dtype),
        "down.bias": np.zeros(h, dtype=dtype),
        "up.weight": np.zeros((h, width), dtype=dtype),
        "up.bias": np.zeros(width, dtype=dtype),
    }


def adapter_forward(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    """x + up(GELU(down(x))), row-wise over the last axis."""
    down_w = params[f"{prefix}.down.weight"]
    if x.shape[-1] != down_w.shape[0]:
        raise dk.ShapeError(f"adapter {prefix}: input width {x.shape[-1]} != adapter width {down_w.shape[0]}")
    hidden = dk.gelu(dk.add(dk.matmul(x, down_w), params[f"{prefix}.down.bias"]))
    delta = dk.add(dk.matmul(hidden, params[f"{prefix}.up.weight"]), params[f"{prefix}.up.bias"])
    return dk.add(x, delta)


def count_params(layout: Mapping[str, tuple[str, tuple[int, ...]]]) -> dict[str, int]:
    """Exact element counts per tag from a name -> (tag, shape) layout."""
    counts = {"frozen": 0, "prompts": 0, "visual_adapters": 0, "text_adapters": 0, "cls_token": 0}
    key = {
        "frozen": "frozen",
        "prompt": "prompts",
        "visual-adapter": "visual_adapters",
        "text-adapter": "text_adapters",
        "cls-token": "cls_token",
    }
    for name, (tag, shape) in layout.items():
        if tag not in key:
            raise ValueError(f"unknown tag {tag!r} on {name}")
        counts[key[tag]] += int(np.prod(shape, dtype=np.int64))
    counts["total_tunable"] = sum(v for k, v in counts.items() if k != "frozen")
    return counts

"""Frozen dual encoders: a frame-wise vision transformer and a byte-level text transformer.

Parameters live in a flat ``ParameterStore`` keyed by dotted names, each name
tagged frozen or with one of the tunable tags.  Forward functions take a
mapping of name -> ``Tensor`` so the same code runs under ``diffkernel.grad``
and plain evaluation.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping

import numpy as np

from . import diffkernel as dk
from .adapters import TAGS, adapter_forward, adapter_shapes, init_adapter
from .diffkernel import Tensor
from .layers import Params, causal_mask, layer_norm, linear, mlp, multi_head_attention
from .tvp import PROMPT_KEY, associate, init_prompt_bank, inject, temporal_attend

PROMPT_MODES = ("all", "first", "off")

# byte tokenizer: 0..255 are raw bytes
SOT, EOT, PAD = 256, 257, 258
BYTE_VOCAB = 259


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    width_v: int = 16
    width_t: int = 16
    embed_dim: int = 16
    heads: int = 2
    frames: int = 4
    height: int = 32
    width: int = 32
    channels: int = 3
    patch: int = 8
    vocab: int = BYTE_VOCAB
    ctx: int = 32
    ratio: int = 4
    tau: float = 0.01
    mlp_ratio: int = 4
    prompt_mode: str = "all"
    seed: int = 0

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(f"frame {self.height}x{self.width} not divisible by patch size {self.patch}")
        if self.width_v % self.heads or self.width_t % self.heads:
            raise ValueError(f"widths {self.width_v}/{self.width_t} not divisible by heads={self.heads}")
        if self.frames < 2:
            raise ValueError(f"frames must be >= 2, got {self.frames}")
        if self.ratio < 1:
            raise ValueError(f"adapter ratio must be >= 1, got {self.ratio}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ValueError(f"prompt_mode must be one of {PROMPT_MODES}, got {self.prompt_mode!r}")
        if self.vocab < BYTE_VOCAB:
            raise ValueError(f"vocab must be >= {BYTE_VOCAB} for the byte tokenizer")
        if self.ctx < 3:
            raise ValueError("ctx must leave room for start and end markers")

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model keys: {sorted(unknown)}")
        return cls(**dict(d))


PRESETS = {
    "toy": ModelConfig(),
    "vit-b16": ModelConfig(
        layers=12, width_v=768, width_t=512, embed_dim=512, heads=8, frames=8,
        height=224, width=224, patch=16, ctx=77, ratio=4,
    ),
}


# ---------------------------------------------------------------- tokenizer


def tokenize(text: str, ctx: int) -> np.ndarray:
    """UTF-8 bytes between start/end markers, truncated and padded to ``ctx``."""
    body = list(text.encode("utf-8"))[: ctx - 2]
    ids = [SOT, *body, EOT]
    return np.array(ids + [PAD] * (ctx - len(ids)), dtype=np.int64)


# ---------------------------------------------------------------- parameters


def _block_shapes(width: int, mlp_ratio: int) -> dict[str, tuple[int, ...]]:
    hidden = width * mlp_ratio
    return {
        "ln1.weight": (width,), "ln1.bias": (width,),
        "attn.qkv.weight": (width, 3 * width), "attn.qkv.bias": (3 * width,),
        "attn.out.weight": (width, width), "attn.out.bias": (width,),
        "ln2.weight": (width,), "ln2.bias": (width,),
        "mlp.fc.weight": (width, hidden), "mlp.fc.bias": (hidden,),
        "mlp.proj.weight": (hidden, width), "mlp.proj.bias": (width,),
    }


def build_layout(config: ModelConfig) -> dict[str, tuple[str, tuple[int, ...]]]:
    """name -> (tag, shape) for every tensor of the model, in canonical order."""
    c = config
    out: dict[str, tuple[str, tuple[int, ...]]] = {}
    out["visual.patch.weight"] = ("frozen", (c.patch_dim, c.width_v))
    out["visual.patch.bias"] = ("frozen", (c.width_v,))
    out["visual.cls"] = ("cls-token", (c.width_v,))
    out["visual.pos"] = ("frozen", (c.num_patches + 1, c.width_v))
    for l in range(c.layers):
        for k, s in _block_shapes(c.width_v, c.mlp_ratio).items():
            out[f"visual.blocks.{l}.{k}"] = ("frozen", s)
        for k, s in adapter_shapes(c.width_v, c.ratio).items():
            out[f"visual.blocks.{l}.adapter.{k}"] = ("visual-adapter", s)
    out["visual.ln_post.weight"] = ("frozen", (c.width_v,))
    out["visual.ln_post.bias"] = ("frozen", (c.width_v,))
    out["visual.proj"] = ("frozen", (c.width_v, c.embed_dim))
    out[PROMPT_KEY] = ("prompt", (c.layers, c.frames, c.width_v))
    out["text.token_embedding"] = ("frozen", (c.vocab, c.width_t))
    out["text.pos"] = ("frozen", (c.ctx, c.width_t))
    for l in range(c.layers):
        for k, s in _block_shapes(c.width_t, c.mlp_ratio).items():
            out[f"text.blocks.{l}.{k}"] = ("frozen", s)
        for k, s in adapter_shapes(c.width_t, c.ratio).items():
            out[f"text.blocks.{l}.adapter.{k}"] = ("text-adapter", s)
    out["text.ln_final.weight"] = ("frozen", (c.width_t,))
    out["text.ln_final.bias"] = ("frozen", (c.width_t,))
    out["text.proj"] = ("frozen", (c.width_t, c.embed_dim))
    return out


@dataclass
class ParameterStore:
    """Named arrays with a frozen/tunable tag per name."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    tags: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.arrays) != set(self.tags):
            raise ValueError("every array needs exactly one tag")
        for name, tag in self.tags.items():
            if tag not in TAGS:
                raise ValueError(f"unknown tag {tag!r} on {name}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __len__(self) -> int:
        return len(self.arrays)

    def names(self, tag: str | None = None) -> list[str]:
        return [n for n in self.arrays if tag is None or self.tags[n] == tag]

    def tunable_names(self) -> list[str]:
        return [n for n, t in self.tags.items() if t != "frozen"]

    def tunable(self) -> dict[str, np.ndarray]:
        return {n: self.arrays[n] for n in self.tunable_names()}

    def layout(self) -> dict[str, tuple[str, tuple[int, ...]]]:
        return {n: (self.tags[n], a.shape) for n, a in self.arrays.items()}

    def frozen_digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.names("frozen")):
            a = np.ascontiguousarray(self.arrays[name])
            h.update(name.encode())
            h.update(str(a.dtype).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore({n: a.astype(dtype) for n, a in self.arrays.items()}, dict(self.tags))

    def copy(self) -> "ParameterStore":
        return ParameterStore({n: a.copy() for n, a in self.arrays.items()}, dict(self.tags))

    def tensors(self, overrides: Mapping[str, Tensor] | None = None) -> dict[str, Tensor]:
        out = {n: Tensor(a) for n, a in self.arrays.items()}
        if overrides:
            out.update(overrides)
        return out

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype


def build_store(config: ModelConfig, dtype=np.float32) -> ParameterStore:
    """Random frozen backbone (seeded by ``config.seed``), identity adapters, small prompts."""
    rng = np.random.default_rng(config.seed)
    layout = build_layout(config)
    arrays: dict[str, np.ndarray] = {}
    tags: dict[str, str] = {}
    for name, (tag, shape) in layout.items():
        tags[name] = tag
        if ".adapter." in name:
            continue
        if name == PROMPT_KEY:
            arrays[name] = init_prompt_bank(*shape, rng=rng, dtype=dtype)
        elif name.endswith(("ln1.weight", "ln2.weight", "ln_post.weight", "ln_final.weight")):
            arrays[name] = np.ones(shape, dtype=dtype)
        elif name.endswith("bias"):
            arrays[name] = (0.02 * rng.standard_normal(shape)).astype(dtype)
        elif name in ("visual.pos", "text.pos", "text.token_embedding", "visual.cls"):
            arrays[name] = (0.5 * rng.standard_normal(shape)).astype(dtype)
        else:
            arrays[name] = (rng.standard_normal(shape) / np.sqrt(shape[0])).astype(dtype)
    for tower, width in (("visual", config.width_v), ("text", config.width_t)):
        for l in range(config.layers):
            for k, a in init_adapter(width, config.ratio, rng, dtype).items():
                arrays[f"{tower}.blocks.{l}.adapter.{k}"] = a
    ordered = {n: arrays[n] for n in layout}
    return ParameterStore(ordered, tags)


def zero_prompts(store: ParameterStore) -> ParameterStore:
    out = store.copy()
    out.arrays[PROMPT_KEY] = np.zeros_like(out.arrays[PROMPT_KEY])
    return out


def with_prompt_mode(config: ModelConfig, mode: str) -> ModelConfig:
    return replace(config, prompt_mode=mode)


# ---------------------------------------------------------------- vision tower


def patchify(frames: np.ndarray, patch: int) -> np.ndarray:
    """(..., H, W, C) -> (..., N, P*P*C), patches in row-major grid order."""
    *lead, h, w, c = frames.shape
    if h % patch or w % patch:
        raise dk.ShapeError(f"frame {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = frames.reshape(*lead, gh, patch, gw, patch, c)
    n = len(lead)
    x = np.transpose(x, tuple(range(n)) + (n, n + 2, n + 1, n + 3, n + 4))
    return x.reshape(*lead, gh * gw, patch * patch * c)


def patch_embed(frames: np.ndarray, params: Params, config: ModelConfig) -> Tensor:
    """(..., H, W, C) -> (..., N+1, D_v): [CLS; patch projections] + positional table."""
    if frames.shape[-3:] != (config.height, config.width, config.channels):
        raise dk.ShapeError(
            f"frame shape {frames.shape[-3:]} != configured {(config.height, config.width, config.channels)}"
        )
    dtype = params["visual.patch.weight"].dtype
    patches = Tensor(patchify(np.asarray(frames, dtype=dtype), config.patch))
    x_p = linear(patches, params, "visual.patch")
    cls = params["visual.cls"]
    lead = x_p.shape[:-2]
    cls_row = dk.broadcast_to(dk.reshape(cls, (1, cls.shape[0])), (*lead, 1, cls.shape[0]))
    x0 = dk.concat([cls_row, x_p], axis=-2)
    return dk.add(x0, params["visual.pos"])


def block_forward(x: Tensor, params: Params, prefix: str, heads: int, keep_rows: int, use_adapter: bool = True) -> Tensor:
    """One frozen block with the adapter after attention.

    ``x`` holds the frame rows, optionally followed by prompt rows; only the
    first ``keep_rows`` rows survive attention.
    """
    if x.shape[-2] < keep_rows:
        raise dk.ShapeError(f"{prefix}: got {x.shape[-2]} rows, need at least {keep_rows}")
    u = dk.add(x, multi_head_attention(layer_norm(x, params, f"{prefix}.ln1"), params, f"{prefix}.attn", heads))
    z = u[..., :keep_rows, :] if u.shape[-2] != keep_rows else u
    if use_adapter:
        z = adapter_forward(z, params, f"{prefix}.adapter")
    return dk.add(z, mlp(layer_norm(z, params, f"{prefix}.ln2"), params, f"{prefix}.mlp"))


def frame_tokens(video: np.ndarray, params: Params, config: ModelConfig, use_adapters: bool = True) -> Tensor:
    """Token states after the last block, (..., T, N+1, D_v)."""
    z = patch_embed(video, params, config)
    if z.shape[-3] != config.frames:
        raise dk.ShapeError(f"video has {z.shape[-3]} frames, config expects {config.frames}")
    rows = config.num_patches + 1
    bank = params[PROMPT_KEY]
    for l in range(config.layers):
        prefix = f"visual.blocks.{l}"
        prompted = config.prompt_mode == "all" or (config.prompt_mode == "first" and l == 0)
        if prompted:
            p_tilde = associate(bank[l], z)
            p_hat = temporal_attend(p_tilde, params, prefix, config.heads)
            x = inject(p_hat, z)
        else:
            x = z
        z = block_forward(x, params, prefix, config.heads, rows, use_adapters)
    return z


def encode_frames(video: np.ndarray, params: Params, config: ModelConfig, use_adapters: bool = True) -> Tensor:
    """(..., T, H, W, C) -> frame embeddings (..., T, D_e)."""
    z = frame_tokens(video, params, config, use_adapters)
    cls = layer_norm(z[..., 0, :], params, "visual.ln_post")
    return dk.matmul(cls, params["visual.proj"])


def video_embed(frame_embeddings: Tensor) -> Tensor:
    """Mean over the frame axis (-2)."""
    if frame_embeddings.shape[-2] < 1:
        raise dk.ShapeError("need at least one frame")
    return dk.mean(frame_embeddings, axis=-2)


def backbone_frames(video: np.ndarray, params: Params, config: ModelConfig) -> Tensor:
    """Frozen image tower alone: no prompt tokens, no adapters."""
    return encode_frames(video, params, with_prompt_mode(config, "off"), use_adapters=False)


# ---------------------------------------------------------------- text tower


def encode_text(tokens: np.ndarray, params: Params, config: ModelConfig, use_adapters: bool = True) -> Tensor:
    """(..., ctx) token ids -> (..., D_e), read out at the end marker."""
    tokens = np.asarray(tokens)
    if tokens.shape[-1] != config.ctx:
        raise dk.ShapeError(f"token sequence length {tokens.shape[-1]} != ctx {config.ctx}")
    if tokens.min() < 0 or tokens.max() >= config.vocab:
        raise ValueError(f"token id outside [0, {config.vocab})")
    flat = tokens.reshape(-1, config.ctx)
    eot = []
    for row in flat:
        hits = np.flatnonzero(row == EOT)
        if hits.size == 0:
            raise ValueError("token sequence has no end marker")
        eot.append(int(hits[0]))
    x = dk.add(params["text.token_embedding"][flat], params["text.pos"])
    mask = causal_mask(config.ctx)
    for l in range(config.layers):
        prefix = f"text.blocks.{l}"
        u = dk.add(x, multi_head_attention(layer_norm(x, params, f"{prefix}.ln1"), params, f"{prefix}.attn", config.heads, mask))
        y = adapter_forward(u, params, f"{prefix}.adapter") if use_adapters else u
        x = dk.add(y, mlp(layer_norm(y, params, f"{prefix}.ln2"), params, f"{prefix}.mlp"))
    x = layer_norm(x, params, "text.ln_final")
    pooled = x[np.arange(flat.shape[0]), np.array(eot)]
    out = dk.matmul(pooled, params["text.proj"])
    return dk.reshape(out, (*tokens.shape[:-1], config.embed_dim))

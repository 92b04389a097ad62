"""Synthetic sprite videos whose class lives in motion, appearance, or both.

Category ids index ``DIRECTIONS`` (motion) and ``PATTERNS`` (appearance); in
mixed mode category ``k`` moves in direction ``k`` with pattern ``k``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import tokenize

MODES = ("motion", "appearance", "mixed")

# (dy, dx) per frame in units of the configured speed
DIRECTIONS = (
    ("right", (0, 1)),
    ("left", (0, -1)),
    ("down", (1, 0)),
    ("up", (-1, 0)),
    ("down-right", (1, 1)),
    ("up-left", (-1, -1)),
    ("down-left", (1, -1)),
    ("up-right", (-1, 1)),
)
# (axis, stripe count, per-channel gain) of the sprite texture
PATTERNS = (
    ("red vertical stripes", (1, 2, (1.0, 0.2, 0.2))),
    ("green horizontal stripes", (0, 2, (0.2, 1.0, 0.2))),
    ("blue fine vertical stripes", (1, 4, (0.2, 0.2, 1.0))),
    ("yellow fine horizontal stripes", (0, 4, (1.0, 1.0, 0.2))),
    ("magenta wide vertical stripes", (1, 1, (1.0, 0.2, 1.0))),
    ("cyan wide horizontal stripes", (0, 1, (0.2, 1.0, 1.0))),
    ("white checkerboard", (2, 2, (1.0, 1.0, 1.0))),
    ("grey fine checkerboard", (2, 4, (0.5, 0.5, 0.5))),
)


@dataclass(frozen=True)
class SynthSpec:
    mode: str = "motion"
    categories: tuple[int, ...] = (0, 1, 2, 3)
    samples_per_category: int = 200
    frames: int = 4
    height: int = 32
    width: int = 32
    channels: int = 3
    patch: int = 8
    sprite: int = 0  # 0 -> 2 * patch
    speed: int = 4
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(int(c) for c in self.categories))

    @property
    def sprite_size(self) -> int:
        return self.sprite or 2 * self.patch

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.categories:
            raise ValueError("need at least one category")
        if len(set(self.categories)) != len(self.categories):
            raise ValueError(f"duplicate category ids in {self.categories}")
        limit = len(DIRECTIONS) if self.mode != "appearance" else len(PATTERNS)
        bad = [c for c in self.categories if not 0 <= c < limit]
        if bad:
            raise ValueError(f"category ids {bad} outside [0, {limit}) for mode {self.mode}")
        if self.samples_per_category < 1:
            raise ValueError("samples_per_category must be >= 1")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        s = self.sprite_size
        travel = (self.frames - 1) * self.speed if self.mode != "appearance" else 0
        if s + travel > min(self.height, self.width):
            raise ValueError(
                f"sprite of size {s} travelling {travel} px leaves the {self.height}x{self.width} frame"
            )
        if self.noise < 0:
            raise ValueError("noise std must be >= 0")


def category_name(mode: str, cid: int) -> str:
    if mode == "motion":
        return f"moving {DIRECTIONS[cid][0]}"
    if mode == "appearance":
        return f"still {PATTERNS[cid][0]}"
    return f"{PATTERNS[cid][0]} moving {DIRECTIONS[cid][0]}"


def sprite_texture(size: int, pattern: int | None, channels: int = 3) -> np.ndarray:
    """(size, size, channels) sprite; plain bright square when pattern is None.

    A pattern is a stripe or checker texture times a per-channel gain, so the
    category shows in both the spatial layout and the colour of the sprite.
    """
    if pattern is None:
        return np.ones((size, size, channels))
    axis, count, gain = PATTERNS[pattern][1]
    idx = np.arange(size)
    band = (idx * count * 2 // size) % 2
    if axis == 0:
        tex = np.broadcast_to(band[:, None], (size, size))
    elif axis == 1:
        tex = np.broadcast_to(band[None, :], (size, size))
    else:
        tex = (band[:, None] + band[None, :]) % 2
    tex = 0.25 + 0.75 * tex.astype(np.float64)
    # channels beyond the RGB gains reuse the mean gain
    gains = np.array([gain[c] if c < len(gain) else np.mean(gain) for c in range(channels)])
    return tex[:, :, None] * gains


def render(spec: SynthSpec, cid: int, start: tuple[int, int], noise_rng: np.random.Generator | None = None) -> np.ndarray:
    """One video (T, H, W, C); ``start`` is the sprite's top-left corner at frame 0."""
    s = spec.sprite_size
    moving = spec.mode in ("motion", "mixed")
    pattern = cid if spec.mode in ("appearance", "mixed") else None
    dy, dx = DIRECTIONS[cid][1] if moving else (0, 0)
    tex = sprite_texture(s, pattern, spec.channels)
    video = np.zeros((spec.frames, spec.height, spec.width, spec.channels))
    for t in range(spec.frames):
        y = start[0] + t * dy * spec.speed
        x = start[1] + t * dx * spec.speed
        if not (0 <= y <= spec.height - s and 0 <= x <= spec.width - s):
            raise ValueError(f"sprite at ({y}, {x}) leaves the frame at t={t}")
        video[t, y : y + s, x : x + s, :] = tex
    if noise_rng is not None and spec.noise > 0:
        video += spec.noise * noise_rng.standard_normal(video.shape)
    return video.astype(np.float32)


def start_range(spec: SynthSpec, cid: int) -> tuple[range, range]:
    """Valid top-left corners at frame 0 keeping the whole path inside the frame."""
    s = spec.sprite_size
    travel = (spec.frames - 1) * spec.speed
    dy, dx = DIRECTIONS[cid][1] if spec.mode != "appearance" else (0, 0)

    def axis(extent: int, d: int) -> range:
        hi = extent - s
        if d > 0:
            return range(0, hi - travel + 1)
        if d < 0:
            return range(travel, hi + 1)
        return range(0, hi + 1)

    return axis(spec.height, dy), axis(spec.width, dx)


@dataclass
class VideoDataset:
    videos: np.ndarray  # (n, T, H, W, C) float32
    labels: np.ndarray  # (n,) global category ids
    category_ids: list[int]
    names: dict[int, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    def local_labels(self, category_ids: Sequence[int] | None = None) -> np.ndarray:
        ids = list(category_ids if category_ids is not None else self.category_ids)
        lookup = {c: i for i, c in enumerate(ids)}
        missing = sorted(set(self.labels.tolist()) - set(lookup))
        if missing:
            raise ValueError(f"labels {missing} not among candidate categories {ids}")
        return np.array([lookup[int(c)] for c in self.labels], dtype=np.int64)

    def subset(self, index) -> "VideoDataset":
        index = np.asarray(index)
        labels = self.labels[index]
        ids = [c for c in self.category_ids if c in set(labels.tolist())]
        return VideoDataset(self.videos[index], labels, ids, {c: self.names[c] for c in ids if c in self.names})

    def restrict(self, category_ids: Sequence[int]) -> "VideoDataset":
        keep = np.flatnonzero(np.isin(self.labels, list(category_ids)))
        sub = self.subset(keep)
        sub.category_ids = [c for c in category_ids if c in set(sub.labels.tolist())]
        return sub

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.videos).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def generate(spec: SynthSpec) -> VideoDataset:
    """Deterministic dataset: each sample draws from its own (seed, index) stream."""
    spec.validate()
    videos, labels = [], []
    i = 0
    for cid in spec.categories:
        ys, xs = start_range(spec, cid)
        for _ in range(spec.samples_per_category):
            rng = np.random.default_rng([spec.seed, i])
            start = (int(rng.choice(ys)), int(rng.choice(xs)))
            videos.append(render(spec, cid, start, rng))
            labels.append(cid)
            i += 1
    names = {c: category_name(spec.mode, c) for c in spec.categories}
    return VideoDataset(np.stack(videos), np.array(labels, dtype=np.int64), list(spec.categories), names)


def sample_frame_indices(total: int, frames: int) -> np.ndarray:
    """``frames`` equally spaced indices into a clip of ``total`` frames (floor rounding)."""
    if total < frames:
        raise ValueError(f"clip has {total} frames, need at least {frames}")
    return np.floor(np.arange(frames) * total / frames).astype(np.int64)


# ---------------------------------------------------------------- text prompts


@dataclass
class CategoryPromptSet:
    ids: list[int]
    names: list[str]
    texts: list[str]
    tokens: np.ndarray  # (K, ctx)

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate category id in prompt set")

    def select(self, ids: Sequence[int]) -> "CategoryPromptSet":
        pos = {c: i for i, c in enumerate(self.ids)}
        missing = [c for c in ids if c not in pos]
        if missing:
            raise KeyError(f"no prompt for categories {missing}")
        idx = [pos[c] for c in ids]
        return CategoryPromptSet(list(ids), [self.names[i] for i in idx], [self.texts[i] for i in idx], self.tokens[idx])


def prompts_from_texts(ids: Sequence[int], names: Sequence[str], texts: Sequence[str], ctx: int) -> CategoryPromptSet:
    tokens = np.stack([tokenize(t, ctx) for t in texts]) if texts else np.zeros((0, ctx), dtype=np.int64)
    return CategoryPromptSet(list(ids), list(names), list(texts), tokens)


def synthetic_prompts(mode: str, ids: Sequence[int], ctx: int) -> CategoryPromptSet:
    names = [category_name(mode, c) for c in ids]
    return prompts_from_texts(ids, names, names, ctx)


def load_descriptions(path: str | Path, ctx: int) -> CategoryPromptSet:
    """Tab-separated ``id, name[, description]`` lines; the name stands in for a missing description."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    ids, names, texts = [], [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (2, 3) or not parts[1].strip():
            raise ValueError(f"{path}:{lineno}: expected 'id<TAB>name[<TAB>description]'")
        try:
            cid = int(parts[0])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: category id {parts[0]!r} is not an integer") from None
        if cid in ids:
            raise ValueError(f"{path}:{lineno}: duplicate category id {cid}")
        name = parts[1].strip()
        desc = parts[2].strip() if len(parts) == 3 and parts[2].strip() else name
        ids.append(cid)
        names.append(name)
        texts.append(desc)
    if not ids:
        raise ValueError(f"{path}: no categories")
    return prompts_from_texts(ids, names, texts, ctx)


def save_dataset(path: str | Path, data: VideoDataset, header: dict | None = None) -> Path:
    """One split per file: label list + raw float32 frames in the tensor-file layout."""
    from .serialization import save

    head = dict(header or {})
    head["dataset"] = {
        "labels": [int(c) for c in data.labels],
        "category_ids": [int(c) for c in data.category_ids],
        "names": {str(c): n for c, n in data.names.items()},
    }
    return save(path, [("videos", "data", data.videos.astype(np.float32))], head)


def load_dataset(path: str | Path) -> VideoDataset:
    from .serialization import load

    header, records = load(path)
    if "dataset" not in header or not records or records[0][0] != "videos":
        raise ValueError(f"{path}: not a dataset file")
    meta = header["dataset"]
    videos = records[0][2]
    labels = np.array(meta["labels"], dtype=np.int64)
    if len(labels) != len(videos):
        raise ValueError(f"{path}: {len(labels)} labels for {len(videos)} videos")
    names = {int(c): n for c, n in meta.get("names", {}).items()}
    return VideoDataset(videos, labels, [int(c) for c in meta["category_ids"]], names)

"""Certify every tunable gradient path of the full training loss against central differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffkernel as dk
from .encoders import ModelConfig, build_store
from .model import batch_loss
from .synthdata import SynthSpec, generate, synthetic_prompts

TOLERANCE = 1e-4


@dataclass
class GradCheckRow:
    tag: str
    tensors: int
    coords: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _perturb(store, rng: np.random.Generator) -> None:
    """Move tunables off their init so no gradient path is trivially zero."""
    for name in store.tunable_names():
        a = store.arrays[name]
        store.arrays[name] = a + 0.1 * rng.standard_normal(a.shape)


def gradcheck(config: ModelConfig, seed: int, batch: int = 2, categories: int = 3, h: float = 1e-4,
              lambda_contrastive: float = 1.0, lambda_motion: float = 1.0,
              corrupt_tag: str | None = None) -> list[GradCheckRow]:
    """One row per tunable tag; ``corrupt_tag`` skews that tag's analytic gradient (negative control)."""
    rng = np.random.default_rng(seed)
    store = build_store(config, dtype=np.float64)
    _perturb(store, rng)
    spec = SynthSpec(mode="motion", categories=tuple(range(categories)), samples_per_category=1,
                     frames=config.frames, height=config.height, width=config.width,
                     channels=config.channels, patch=config.patch, speed=1, noise=0.1, seed=seed)
    data = generate(spec)
    pick = rng.choice(len(data), size=min(batch, len(data)), replace=False)
    videos = data.videos[pick].astype(np.float64)
    labels = data.local_labels()[pick]
    tokens = synthetic_prompts("motion", data.category_ids, config.ctx).tokens
    frozen = {n: dk.Tensor(a) for n, a in store.arrays.items() if store.tags[n] == "frozen"}
    tunable = {n: store.arrays[n] for n in store.tunable_names()}

    def loss_fn(params):
        return batch_loss({**frozen, **params}, config, videos, tokens, labels, lambda_contrastive, lambda_motion)

    _, analytic = dk.grad(loss_fn, tunable)
    numeric = dk.fd_oracle(loss_fn, tunable, h=h)
    rows: dict[str, GradCheckRow] = {}
    for name in tunable:
        tag = store.tags[name]
        a = analytic[name]
        if tag == corrupt_tag:
            a = a * 1.01 + 1e-3
        err = dk.max_relative_error(a, numeric[name])
        row = rows.setdefault(tag, GradCheckRow(tag, 0, 0, 0.0))
        row.tensors += 1
        row.coords += a.size
        row.max_rel_error = max(row.max_rel_error, err)
    return [rows[t] for t in sorted(rows)]

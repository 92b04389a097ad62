"""The adapted video-text model: store + config + the loss it is trained on."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import diffkernel as dk
from .diffkernel import Tensor
from .encoders import ModelConfig, ParameterStore, build_store, encode_frames, encode_text, video_embed
from .losses import similarity, total_loss
from .tvp import PROMPT_KEY


@dataclass
class VideoTextModel:
    config: ModelConfig
    store: ParameterStore
    trained_on: list[int] = field(default_factory=list)

    @classmethod
    def create(cls, config: ModelConfig, dtype=np.float32) -> "VideoTextModel":
        return cls(config, build_store(config, dtype))

    def trainable_names(self, freeze_tags=()) -> list[str]:
        names = []
        for name in self.store.tunable_names():
            tag = self.store.tags[name]
            if tag in freeze_tags:
                continue
            if name == PROMPT_KEY and self.config.prompt_mode == "off":
                continue
            names.append(name)
        return names

    def params(self, overrides: Mapping[str, Tensor] | None = None) -> dict[str, Tensor]:
        return self.store.tensors(overrides)

    def frame_embeddings(self, videos: np.ndarray, batch_size: int = 64) -> np.ndarray:
        params = self.params()
        outs = [encode_frames(videos[i : i + batch_size], params, self.config).data for i in range(0, len(videos), batch_size)]
        return np.concatenate(outs, axis=0)

    def text_embeddings(self, tokens: np.ndarray) -> np.ndarray:
        return encode_text(tokens, self.params(), self.config).data

    def scores(self, videos: np.ndarray, tokens: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """(B, K) cosine similarities between videos and category prompts."""
        params = self.params()
        texts = encode_text(tokens, params, self.config)
        rows = []
        for i in range(0, len(videos), batch_size):
            v = video_embed(encode_frames(videos[i : i + batch_size], params, self.config))
            rows.append(similarity(v, texts).data)
        return np.concatenate(rows, axis=0)


def batch_loss(params: Mapping[str, Tensor], config: ModelConfig, videos: np.ndarray, tokens: np.ndarray,
               labels: np.ndarray, lambda_contrastive: float = 1.0, lambda_motion: float = 1.0,
               return_logits: bool = False):
    frames = encode_frames(videos, params, config)
    videos_e = video_embed(frames)
    texts = encode_text(tokens, params, config)
    loss = total_loss(videos_e, texts, labels, frames, config.tau, lambda_contrastive, lambda_motion)
    if return_logits:
        return loss, similarity(videos_e, texts).data
    return loss


def loss_and_grads(model: VideoTextModel, names, videos, tokens, labels, lambda_contrastive=1.0, lambda_motion=1.0):
    """Loss, gradients for ``names``, and the (B, K) similarity matrix of this batch."""
    frozen = {n: Tensor(a) for n, a in model.store.arrays.items() if n not in set(names)}
    captured = {}

    def fn(tunable):
        loss, sims = batch_loss({**frozen, **tunable}, model.config, videos, tokens, labels,
                                lambda_contrastive, lambda_motion, return_logits=True)
        captured["sims"] = sims
        return loss

    loss, grads = dk.grad(fn, {n: model.store.arrays[n] for n in names})
    return loss, grads, captured["sims"]

"""Contrastive video-text loss, motion loss, and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffkernel as dk
from .diffkernel import Tensor

NORM_FLOOR = 1e-12
DELTA = 1.0


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise ValueError("cosine of a near-zero vector")
    return float(a @ b / (na * nb))


def l2_normalize(x: Tensor) -> Tensor:
    norm = dk.sqrt(dk.sum_(dk.square(x), axis=-1, keepdims=True))
    if np.any(norm.data < NORM_FLOOR):
        raise ValueError("cannot normalize a near-zero embedding")
    return dk.div(x, norm)


def similarity(videos: Tensor, texts: Tensor) -> Tensor:
    """(B, D) x (K, D) -> (B, K) cosine similarities."""
    v = l2_normalize(videos)
    y = l2_normalize(texts)
    return dk.matmul(v, dk.transpose(y, (1, 0)))


def contrastive_loss(videos: Tensor, texts: Tensor, labels, tau: float) -> Tensor:
    """Mean over the batch of -log softmax(cos / tau)[label]."""
    labels = np.asarray(labels, dtype=np.int64)
    k = texts.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label outside [0, {k})")
    logits = dk.scale(similarity(videos, texts), 1.0 / tau)
    logp = dk.log_softmax(logits, axis=-1)
    picked = logp[np.arange(labels.size), labels]
    return dk.scale(dk.mean(picked), -1.0)


@dataclass
class MotionStats:
    var: np.ndarray
    central: np.ndarray
    spread: float
    loss: float
    delta: float = DELTA


def _motion_terms(frames: Tensor):
    t = frames.shape[-2]
    if t < 2:
        raise ValueError(f"motion loss needs at least 2 frames, got {t}")
    centred = dk.sub(frames, dk.mean(frames, axis=-2, keepdims=True))
    var = dk.mean(dk.square(centred), axis=-2)
    if t > 2:
        diffs = dk.abs_(dk.sub(frames[..., 2:, :], frames[..., :-2, :]))
        # interior central differences only, kept at the 1/T normalization
        central = dk.scale(dk.sum_(diffs, axis=-2), 0.5 / t)
    else:
        central = dk.scale(var, 0.0)
    spread = dk.add(dk.mean(var, axis=-1), dk.mean(central, axis=-1))
    return var, central, spread


def motion_loss(frames: Tensor) -> Tensor:
    """1 / (delta + spread) per video; frames (..., T, D)."""
    _, _, spread = _motion_terms(frames)
    return dk.div(1.0, dk.add(spread, DELTA))


def motion_stats(frames) -> MotionStats:
    frames = dk.as_tensor(np.asarray(frames.data if isinstance(frames, Tensor) else frames, dtype=np.float64))
    if frames.ndim != 2:
        raise ValueError(f"expected (T, D) frame embeddings, got {frames.shape}")
    var, central, spread = _motion_terms(frames)
    spread_v = float(spread.data)
    return MotionStats(var.data, central.data, spread_v, 1.0 / (DELTA + spread_v))


def total_loss(videos: Tensor, texts: Tensor, labels, frame_embeddings: Tensor, tau: float,
               lambda_contrastive: float = 1.0, lambda_motion: float = 1.0) -> Tensor:
    """lambda_c * contrastive + lambda_m * batch-mean motion loss."""
    if lambda_contrastive < 0 or lambda_motion < 0:
        raise ValueError("loss weights must be non-negative")
    terms = []
    if lambda_contrastive:
        terms.append(dk.scale(contrastive_loss(videos, texts, labels, tau), lambda_contrastive))
    if lambda_motion:
        terms.append(dk.scale(dk.mean(motion_loss(frame_embeddings)), lambda_motion))
    if not terms:
        return dk.scale(dk.sum_(videos), 0.0)
    out = terms[0]
    for t in terms[1:]:
        out = dk.add(out, t)
    return out

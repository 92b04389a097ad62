"""AdamW with linear warmup + cosine decay over the tunable partition only."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .diffkernel import NonFiniteError
from .encoders import ParameterStore
from .model import VideoTextModel, loss_and_grads
from .serialization import canonical_json, save_checkpoint
from .synthdata import CategoryPromptSet, VideoDataset, sample_frame_indices

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "train_loss", "train_top1", "wall_seconds")


class FreezeViolation(ValueError):
    pass


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 5e-6
    epochs: int = 50
    warmup_fraction: float = 0.10
    weight_decay: float = 0.2
    batch_size: int = 16
    seed: int = 0
    lambda_contrastive: float = 1.0
    lambda_motion: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 0  # 0 -> epochs * batches
    freeze_tags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "freeze_tags", tuple(self.freeze_tags))
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError(f"warmup_fraction must lie in [0, 1), got {self.warmup_fraction}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["freeze_tags"] = list(self.freeze_tags)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown trainer keys: {sorted(unknown)}")
        return cls(**dict(d))


def lr_at(step: float, total_steps: int, config: TrainConfig) -> float:
    """Linear ramp to base_lr over the warmup span, then half-cosine down to 0."""
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = config.warmup_fraction * total_steps
    if step < warmup:
        return config.base_lr * step / warmup
    span = total_steps - warmup
    progress = (step - warmup) / span if span > 0 else 1.0
    return 0.5 * config.base_lr * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def step(store: ParameterStore, grads: Mapping[str, np.ndarray], state: OptimizerState, lr: float,
         config: TrainConfig) -> tuple[ParameterStore, OptimizerState]:
    """One decoupled-weight-decay Adam update, in place on the tunable arrays."""
    for name in grads:
        if name not in store.tags:
            raise KeyError(f"gradient for unknown tensor {name}")
        if store.tags[name] == "frozen":
            raise FreezeViolation(f"gradient supplied for frozen tensor {name}")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        theta = store.arrays[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name}")
        g = g.astype(theta.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        theta -= (lr * config.weight_decay * theta + lr * update).astype(theta.dtype)
    return store, state


@dataclass
class TrainResult:
    model: VideoTextModel
    records: list[dict]
    checkpoint: Path | None = None
    log_path: Path | None = None


def _fit_frames(videos: np.ndarray, frames: int) -> np.ndarray:
    if videos.shape[1] == frames:
        return videos
    return videos[:, sample_frame_indices(videos.shape[1], frames)]


def format_log(records: list[dict], header: Mapping) -> str:
    lines = ["# config: " + canonical_json(header), ",".join(LOG_COLUMNS)]
    for r in records:
        lines.append(f"{r['epoch']},{r['lr']:.10g},{r['train_loss']:.10g},{r['train_top1']:.10g},{r['wall_seconds']:.3f}")
    return "\n".join(lines) + "\n"


def train(model: VideoTextModel, data: VideoDataset, prompts: CategoryPromptSet, config: TrainConfig,
          out_dir: str | Path | None = None, run_header: Mapping | None = None) -> TrainResult:
    """Train the tunable partition of ``model`` in place.

    Category prompts are restricted to ``data.category_ids`` in that order;
    labels are indices into it.  With ``out_dir`` the metric log and a
    checkpoint are rewritten after every epoch, so an abort leaves the last
    good epoch on disk.
    """
    names = model.trainable_names(config.freeze_tags)
    videos = _fit_frames(data.videos, model.config.frames)
    labels = data.local_labels()
    tokens = prompts.select(data.category_ids).tokens
    n = len(labels)
    batches = math.ceil(n / config.batch_size)
    total = config.max_steps or config.epochs * batches
    epochs = math.ceil(total / batches)
    header = dict(run_header or {"model": model.config.to_dict(), "trainer": config.to_dict()})
    rng = np.random.default_rng(config.seed)
    state = OptimizerState()
    records: list[dict] = []
    out = Path(out_dir) if out_dir is not None else None
    ckpt = log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        ckpt, log_path = out / "checkpoint.bin", out / "metrics.csv"
    model.trained_on = list(data.category_ids)
    meta = {"run": header, "trained_on": model.trained_on}
    started = time.perf_counter()
    it = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        losses, correct, seen, lr = [], 0, 0, 0.0
        for b in range(batches):
            if it >= total:
                break
            idx = np.sort(order[b * config.batch_size : (b + 1) * config.batch_size])
            try:
                loss, grads, sims = loss_and_grads(model, names, videos[idx], tokens, labels[idx],
                                                   config.lambda_contrastive, config.lambda_motion)
            except NonFiniteError as exc:
                raise TrainingAborted(f"non-finite values at epoch {epoch}, step {it}: {exc}") from exc
            lr = lr_at(it + 1, total, config)
            step(model.store, grads, state, lr, config)
            it += 1
            losses.append(loss)
            correct += int(np.sum(np.argmax(sims, axis=1) == labels[idx]))
            seen += len(idx)
        if not seen:
            break
        rec = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "train_top1": 100.0 * correct / seen,
            "wall_seconds": time.perf_counter() - started,
        }
        records.append(rec)
        log.info("epoch %d lr %.3g loss %.4f top1 %.1f", epoch, lr, rec["train_loss"], rec["train_top1"])
        if out is not None:
            save_checkpoint(ckpt, model.store, model.config, meta)
            log_path.write_text(format_log(records, header))
    return TrainResult(model, records, ckpt, log_path)

"""Zero-shot, base-to-novel, and K-shot protocols with top-1 scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .synthdata import CategoryPromptSet, VideoDataset


def top1(scores, labels) -> float:
    """Percentage of rows whose argmax (lowest index on ties) equals the label."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("top1 needs a non-empty (B, K) score matrix")
    if scores.shape[1] < 1:
        raise ValueError("top1 needs at least one class")
    return 100.0 * float(np.mean(np.argmax(scores, axis=1) == labels))


def harmonic_mean(base: float, novel: float) -> float:
    if base < 0 or novel < 0:
        raise ValueError(f"accuracies must be non-negative, got {base}, {novel}")
    if base + novel == 0:
        return 0.0
    return 2.0 * base * novel / (base + novel)


@dataclass(frozen=True)
class CategorySplit:
    base_ids: frozenset[int]
    novel_ids: frozenset[int]
    all_ids: frozenset[int]

    def __post_init__(self):
        if not self.base_ids or not self.novel_ids:
            raise ValueError("base and novel sets must both be non-empty")
        if self.base_ids & self.novel_ids:
            raise ValueError(f"base and novel overlap on {sorted(self.base_ids & self.novel_ids)}")
        if self.base_ids | self.novel_ids != self.all_ids:
            raise ValueError("base and novel sets must cover every category")

    @classmethod
    def even_odd(cls, ids: Sequence[int]) -> "CategorySplit":
        ids = [int(i) for i in ids]
        return cls(frozenset(i for i in ids if i % 2 == 0), frozenset(i for i in ids if i % 2), frozenset(ids))


@dataclass
class EvalReport:
    protocol: str
    top1: dict[str, float]
    counts: dict[str, int]
    seed: int = 0
    frames: int = 8
    views: int = 1
    hm: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for split, acc in self.top1.items():
            if not 0.0 <= acc <= 100.0:
                raise ValueError(f"accuracy {acc} for {split} outside [0, 100]")

    def columns(self) -> list[tuple[str, object]]:
        cols: list[tuple[str, object]] = [("protocol", self.protocol)]
        for split in self.top1:
            cols.append((f"{split}_top1", round(self.top1[split], 6)))
        if self.hm is not None:
            cols.append(("hm", round(self.hm, 6)))
        for split in self.counts:
            cols.append((f"{split}_n", self.counts[split]))
        cols += [("frames", self.frames), ("views", self.views), ("seed", self.seed)]
        cols += list(self.extra.items())
        return cols

    def to_csv(self) -> str:
        cols = self.columns()
        return ",".join(k for k, _ in cols) + "\n" + ",".join(str(v) for _, v in cols) + "\n"

    def table(self) -> str:
        cols = self.columns()
        w = max(len(k) for k, _ in cols)
        return "\n".join(f"{k:<{w}}  {v}" for k, v in cols)


def _predict(model, videos: np.ndarray, prompts: CategoryPromptSet) -> np.ndarray:
    return np.argmax(model.scores(videos, prompts.tokens), axis=1)


def _accuracy(model, data: VideoDataset, prompts: CategoryPromptSet) -> float:
    preds = _predict(model, data.videos, prompts)
    # labels are only looked at after every prediction is made
    truth = data.local_labels(prompts.ids)
    return 100.0 * float(np.mean(preds == truth))


def zero_shot_eval(model, target: VideoDataset, prompts: CategoryPromptSet,
                   source_ids: Sequence[int] | None = None, seed: int = 0) -> EvalReport:
    """Score target videos against the target categories' prompts only."""
    source = set(model.trained_on if source_ids is None else source_ids)
    overlap = source & set(target.category_ids)
    if overlap:
        raise ValueError(f"target categories overlap the training categories: {sorted(overlap)}")
    pool = prompts.select(target.category_ids)
    acc = _accuracy(model, target, pool)
    return EvalReport("zero-shot", {"target": acc}, {"target": len(target)}, seed, model.config.frames, 1,
                      extra={"classes": len(pool.ids)})


def base_to_novel_eval(model, data: VideoDataset, prompts: CategoryPromptSet, split: CategorySplit,
                       include_base_distractors: bool = False, seed: int = 0) -> EvalReport:
    """Top-1 on base videos over base prompts, on novel videos over novel prompts, and their HM."""
    if set(data.category_ids) - split.all_ids:
        raise ValueError("dataset has categories outside the split")
    base_ids = sorted(split.base_ids)
    novel_ids = sorted(split.novel_ids)
    base_data = data.restrict(base_ids)
    novel_data = data.restrict(novel_ids)
    if len(base_data) == 0 or len(novel_data) == 0:
        raise ValueError("both base and novel splits need evaluation videos")
    base_acc = _accuracy(model, base_data, prompts.select(base_ids))
    novel_pool = prompts.select(novel_ids + base_ids if include_base_distractors else novel_ids)
    novel_acc = _accuracy(model, novel_data, novel_pool)
    return EvalReport(
        "base-to-novel", {"base": base_acc, "novel": novel_acc},
        {"base": len(base_data), "novel": len(novel_data)}, seed, model.config.frames, 1,
        hm=harmonic_mean(base_acc, novel_acc),
    )


def few_shot_sample(data: VideoDataset, k: int, seed: int) -> VideoDataset:
    """Exactly ``k`` videos per category, drawn without replacement."""
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    picked = []
    for cid in data.category_ids:
        pool = np.flatnonzero(data.labels == cid)
        if pool.size < k:
            name = data.names.get(cid, str(cid))
            raise ValueError(f"category {cid} ({name}) has {pool.size} samples, fewer than K={k}")
        picked.append(np.sort(rng.choice(pool, size=k, replace=False)))
    return data.subset(np.concatenate(picked))


def few_shot_eval(model, test: VideoDataset, prompts: CategoryPromptSet, k: int, seed: int = 0) -> EvalReport:
    acc = _accuracy(model, test, prompts.select(test.category_ids))
    return EvalReport("few-shot", {"test": acc}, {"test": len(test)}, seed, model.config.frames, 1, extra={"k": k})

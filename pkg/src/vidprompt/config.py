"""Run configuration: YAML file + dotted ``--set`` overrides -> one resolved RunConfig."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import yaml

from .encoders import PRESETS, ModelConfig
from .synthdata import SynthSpec
from .trainer import TrainConfig

SECTIONS = ("model", "trainer", "data", "eval")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    mode: str = "motion"
    categories: tuple[int, ...] = (0, 1, 2, 3)
    samples_per_category: int = 200
    speed: int = 4
    noise: float = 0.05
    sprite: int = 0
    seed: int = 0
    descriptions: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(int(c) for c in self.categories))


@dataclass(frozen=True)
class EvalConfig:
    target_categories: tuple[int, ...] = (4, 5, 6, 7)
    categories: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)
    samples_per_category: int = 50
    seed: int = 1000
    k: int | None = None
    include_base_distractors: bool = False

    def __post_init__(self):
        object.__setattr__(self, "target_categories", tuple(int(c) for c in self.target_categories))
        object.__setattr__(self, "categories", tuple(int(c) for c in self.categories))


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        d = {
            "model": self.model.to_dict(),
            "trainer": self.trainer.to_dict(),
            "data": {f.name: getattr(self.data, f.name) for f in fields(DataConfig)},
            "eval": {f.name: getattr(self.eval, f.name) for f in fields(EvalConfig)},
        }
        for section in ("data", "eval"):
            for k, v in d[section].items():
                if isinstance(v, tuple):
                    d[section][k] = list(v)
        return d

    def synth_spec(self, categories: Sequence[int] | None = None, samples: int | None = None,
                   seed: int | None = None) -> SynthSpec:
        m, d = self.model, self.data
        return SynthSpec(
            mode=d.mode,
            categories=tuple(categories if categories is not None else d.categories),
            samples_per_category=samples if samples is not None else d.samples_per_category,
            frames=m.frames, height=m.height, width=m.width, channels=m.channels, patch=m.patch,
            sprite=d.sprite, speed=d.speed, noise=d.noise,
            seed=d.seed if seed is None else seed,
        )


def _key_lines(text: str) -> dict[str, int]:
    """Dotted key -> 1-based line number, from the YAML node tree."""
    out: dict[str, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[key] = k.start_mark.line + 1
                walk(v, key)

    if root is not None:
        walk(root, "")
    return out


def _where(key: str, lines: dict[str, int], source: str) -> str:
    if key in lines:
        return f"{source}, line {lines[key]}: key '{key}'"
    return f"{source}: key '{key}'"


def _coerce(value: Any, default: Any, where: str) -> Any:
    """Check ``value`` against the kind of the field's default; ints widen to float."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        kind = "true/false"
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        kind = "an integer"
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        kind = "a number"
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
        kind = "a string"
    elif isinstance(default, tuple):
        ok = isinstance(value, (list, tuple))
        kind = "a list"
    else:
        return value
    if not ok:
        raise ConfigError(f"{where}: expected {kind}, got {value!r}")
    return value


def builtin_config_path(name: str) -> Path | None:
    candidate = resources.files("vidprompt") / "configs" / f"{name}.yaml"
    return Path(str(candidate)) if candidate.is_file() else None


def read_config_text(path_or_name: str | None) -> tuple[str, str]:
    """(text, source label); accepts a file path or a builtin name such as ``toy``."""
    if path_or_name is None:
        path_or_name = "toy"
    p = Path(path_or_name)
    if p.is_file():
        return p.read_text(encoding="utf-8"), str(p)
    builtin = builtin_config_path(path_or_name)
    if builtin is not None:
        return builtin.read_text(encoding="utf-8"), f"<builtin {path_or_name}>"
    raise ConfigError(f"config file not found: {path_or_name}")


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, raw = item.split("=", 1)
    key = key.strip()
    if key.count(".") != 1 or key.split(".")[0] not in SECTIONS:
        raise ConfigError(f"override key '{key}' must look like <section>.<name>, section in {SECTIONS}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override '{key}': cannot parse value {raw!r}: {exc}") from None
    return key, value


def resolve(text: str, source: str = "<config>", overrides: Sequence[str] = ()) -> RunConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}, line {mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: cannot parse config: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections")
    lines = _key_lines(text)
    for section in raw:
        if section not in SECTIONS:
            raise ConfigError(f"{_where(str(section), lines, source)} is not a known section {SECTIONS}")
    merged = {s: copy.deepcopy(raw.get(s) or {}) for s in SECTIONS}
    for s in SECTIONS:
        if not isinstance(merged[s], dict):
            raise ConfigError(f"{_where(s, lines, source)} must be a mapping")
    for item in overrides:
        key, value = parse_override(item)
        section, name = key.split(".")
        merged[section][name] = value
        lines.pop(key, None)

    def build(section: str, cls, base=None):
        values = merged[section]
        defaults = {f.name: getattr(base, f.name) if base is not None else f.default for f in fields(cls)}
        for k in list(values):
            if k not in defaults and not (section == "model" and k == "preset"):
                raise ConfigError(f"{_where(f'{section}.{k}', lines, source)} is not a known setting")
            if k in defaults:
                default = defaults[k]
                if not isinstance(default, (bool, int, float, str, tuple, type(None))):
                    default = None  # dataclass MISSING or factory: leave to the constructor
                values[k] = _coerce(values[k], default, _where(f"{section}.{k}", lines, source))
        try:
            return replace(base, **values) if base is not None else cls(**values)
        except (TypeError, ValueError) as exc:
            keys = ", ".join(_where(f"{section}.{k}", lines, source) for k in values) or section
            raise ConfigError(f"invalid {section} settings ({keys}): {exc}") from None

    preset = merged["model"].pop("preset", None)
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"{_where('model.preset', lines, source)}: unknown preset {preset!r}, choose from {sorted(PRESETS)}")
    model = build("model", ModelConfig, PRESETS[preset] if preset else None)
    if "freeze_tags" in merged["trainer"] and isinstance(merged["trainer"]["freeze_tags"], str):
        merged["trainer"]["freeze_tags"] = [merged["trainer"]["freeze_tags"]]
    trainer = build("trainer", TrainConfig)
    data = build("data", DataConfig)
    evalc = build("eval", EvalConfig)
    run = RunConfig(model, trainer, data, evalc)
    try:
        run.synth_spec().validate()
    except ValueError as exc:
        raise ConfigError(f"{source}: data settings: {exc}") from None
    return run


def load_run_config(path_or_name: str | None, overrides: Sequence[str] = (), seed: int | None = None) -> RunConfig:
    text, source = read_config_text(path_or_name)
    extra = list(overrides)
    if seed is not None:
        extra = [f"model.seed={seed}", f"trainer.seed={seed}", f"data.seed={seed}"] + extra
    return resolve(text, source, extra)

import math

import numpy as np
import pytest

from vidprompt import trainer as trainer_mod
from vidprompt.diffkernel import NonFiniteError
from vidprompt.encoders import ModelConfig, build_store
from vidprompt.model import VideoTextModel
from vidprompt.serialization import load_checkpoint
from vidprompt.synthdata import SynthSpec, generate, synthetic_prompts
from vidprompt.trainer import FreezeViolation, OptimizerState, TrainConfig, TrainingAborted, lr_at, step, train


def test_lr_schedule_landmarks():
    cfg = TrainConfig(base_lr=1e-3, warmup_fraction=0.1)
    total = 1000
    assert lr_at(0, total, cfg) == 0.0
    assert lr_at(100, total, cfg) == pytest.approx(1e-3, abs=1e-15)
    assert abs(lr_at(550, total, cfg) - 5e-4) < 1e-12
    assert lr_at(total, total, cfg) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(50, total, cfg) == pytest.approx(5e-4, abs=1e-15)


def test_lr_schedule_continuous_at_junction():
    cfg = TrainConfig(base_lr=2e-3, warmup_fraction=0.1)
    left, right = lr_at(100 - 1e-9, 1000, cfg), lr_at(100 + 1e-9, 1000, cfg)
    assert abs(left - right) < 1e-12
    assert abs(left - 2e-3) < 1e-12


def test_lr_schedule_no_warmup_and_bounds():
    cfg = TrainConfig(base_lr=1.0, warmup_fraction=0.0)
    assert lr_at(0, 10, cfg) == 1.0
    with pytest.raises(ValueError):
        lr_at(11, 10, cfg)
    with pytest.raises(ValueError):
        lr_at(-1, 10, cfg)


def test_lr_schedule_is_monotone_after_warmup():
    cfg = TrainConfig(base_lr=1.0)
    vals = [lr_at(s, 200, cfg) for s in range(20, 201)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("kwargs", [{"warmup_fraction": 1.0}, {"warmup_fraction": -0.1}, {"base_lr": 0.0}])
def test_train_config_invariants(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def _store64(small_config):
    return build_store(small_config, dtype=np.float64)


def test_zero_gradient_without_decay_is_noop(small_config):
    store = _store64(small_config)
    before = {n: store.arrays[n].copy() for n in store.tunable_names()}
    grads = {n: np.zeros_like(before[n]) for n in before}
    step(store, grads, OptimizerState(), 0.1, TrainConfig(weight_decay=0.0))
    for n in before:
        np.testing.assert_array_equal(store.arrays[n], before[n])


def test_single_scalar_update(small_config):
    store = _store64(small_config)
    name = "visual.cls"
    store.arrays[name][:] = 1.0
    grads = {name: np.ones_like(store.arrays[name])}
    step(store, grads, OptimizerState(), 0.1, TrainConfig(weight_decay=0.0))
    # bias-corrected first step: m_hat = 1, v_hat = 1 -> update = 1 / (1 + eps)
    want = 1.0 - 0.1 / (1.0 + 1e-8)
    np.testing.assert_allclose(store.arrays[name], want, atol=1e-10, rtol=0)
    assert abs(store.arrays[name][0] - 0.9) < 1e-8


def test_decoupled_decay_alone(small_config):
    store = _store64(small_config)
    name = "visual.cls"
    store.arrays[name][:] = 2.0
    # zero gradient: only the decay term moves the parameter
    step(store, {name: np.zeros_like(store.arrays[name])}, OptimizerState(), 0.1, TrainConfig(weight_decay=0.2))
    np.testing.assert_allclose(store.arrays[name], 2.0 - 0.1 * 0.2 * 2.0, atol=1e-12)


def test_frozen_gradient_rejected(small_config):
    store = _store64(small_config)
    name = "visual.patch.weight"
    assert store.tags[name] == "frozen"
    with pytest.raises(FreezeViolation, match="frozen"):
        step(store, {name: np.zeros_like(store.arrays[name])}, OptimizerState(), 0.1, TrainConfig())


def _data(mode, categories, n, seed=0, config=None):
    config = config or ModelConfig()
    spec = SynthSpec(mode=mode, categories=tuple(categories), samples_per_category=n, frames=config.frames,
                     height=config.height, width=config.width, patch=config.patch, seed=seed)
    return generate(spec)


def test_separable_two_category_set_is_learned():
    cfg = ModelConfig(prompt_mode="off")
    model = VideoTextModel.create(cfg)
    data = _data("appearance", [0, 1], 32)
    prompts = synthetic_prompts("appearance", [0, 1], cfg.ctx)
    res = train(model, data, prompts, TrainConfig(base_lr=1e-2, epochs=20, batch_size=16, lambda_motion=0.0))
    assert res.records[-1]["train_top1"] == 100.0


def _short_run(tmp_path, name, seed=0):
    cfg = ModelConfig(seed=seed)
    model = VideoTextModel.create(cfg)
    data = _data("motion", [0, 1, 2], 8)
    prompts = synthetic_prompts("motion", [0, 1, 2], cfg.ctx)
    tcfg = TrainConfig(base_lr=1e-2, epochs=3, batch_size=8, seed=seed)
    return train(model, data, prompts, tcfg, out_dir=tmp_path / name)


def _without_wall_clock(text):
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


def test_seeded_runs_are_identical(tmp_path):
    a = _short_run(tmp_path, "a")
    b = _short_run(tmp_path, "b")
    assert _without_wall_clock(a.log_path.read_text()) == _without_wall_clock(b.log_path.read_text())
    sa, _, _ = load_checkpoint(a.checkpoint)
    sb, _, _ = load_checkpoint(b.checkpoint)
    for n in sa.names():
        np.testing.assert_array_equal(sa[n], sb[n])


def test_config_echo_in_log_header(tmp_path):
    res = _short_run(tmp_path, "a")
    first = res.log_path.read_text().splitlines()[0]
    assert first.startswith("# config: ")
    assert '"base_lr":0.01' in first and '"epochs":3' in first
    assert res.log_path.read_text().splitlines()[1] == ",".join(trainer_mod.LOG_COLUMNS)
    assert len(res.records) == 3


def test_training_moves_only_tunables(tmp_path):
    cfg = ModelConfig()
    model = VideoTextModel.create(cfg)
    frozen_before = model.store.frozen_digest()
    tunable_before = {n: model.store.arrays[n].copy() for n in model.trainable_names()}
    data = _data("motion", [0, 1], 4)
    train(model, data, synthetic_prompts("motion", [0, 1], cfg.ctx), TrainConfig(base_lr=1e-2, epochs=2, batch_size=4))
    assert model.store.frozen_digest() == frozen_before
    assert any(not np.array_equal(model.store.arrays[n], tunable_before[n]) for n in tunable_before)


def test_non_finite_loss_aborts_and_keeps_last_checkpoint(tmp_path, monkeypatch):
    cfg = ModelConfig()
    model = VideoTextModel.create(cfg)
    data = _data("motion", [0, 1], 4)
    prompts = synthetic_prompts("motion", [0, 1], cfg.ctx)
    real = trainer_mod.loss_and_grads
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 2:  # batches per epoch = 2, so epoch 2 fails
            raise NonFiniteError("loss is nan")
        return real(*args, **kwargs)

    monkeypatch.setattr(trainer_mod, "loss_and_grads", flaky)
    out = tmp_path / "run"
    with pytest.raises(TrainingAborted, match="epoch 2"):
        train(model, data, prompts, TrainConfig(base_lr=1e-2, epochs=3, batch_size=4), out_dir=out)
    store, _, meta = load_checkpoint(out / "checkpoint.bin")
    assert store.frozen_digest() == model.store.frozen_digest()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[2].startswith("1,")


def test_max_steps_caps_updates():
    cfg = ModelConfig()
    model = VideoTextModel.create(cfg)
    data = _data("motion", [0, 1], 8)
    res = train(model, data, synthetic_prompts("motion", [0, 1], cfg.ctx),
                TrainConfig(base_lr=1e-2, epochs=50, batch_size=4, max_steps=6))
    assert len(res.records) == math.ceil(6 / 4)
    assert res.records[-1]["lr"] == pytest.approx(0.0, abs=1e-18)

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vidprompt.encoders import ModelConfig, build_store  # noqa: E402


@pytest.fixture
def toy_config():
    return ModelConfig()


@pytest.fixture
def small_config():
    # N=4 patches, D=8, 2 heads
    return ModelConfig(layers=2, width_v=8, width_t=8, embed_dim=6, heads=2, frames=3,
                       height=8, width=8, patch=4, ctx=12, ratio=4)


def randomize_tunables(store, rng, scale=0.1):
    for name in store.tunable_names():
        store.arrays[name] = (store.arrays[name] + scale * rng.standard_normal(store.arrays[name].shape)).astype(
            store.arrays[name].dtype
        )
    return store


@pytest.fixture
def small_store64(small_config):
    store = build_store(small_config, dtype=np.float64)
    return randomize_tunables(store, np.random.default_rng(7))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] #{number:<2} {title}" + (f": {detail}" if detail else "")
        ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)

import os
from pathlib import Path

import numpy as np
import pytest

from rulnet.nn.model import ModelConfig
from rulnet.synth import SynthConfig, generate

# Real C-MAPSS files are optional; point CMAPSS_DIR at a folder holding
# train_FD001.txt, test_FD001.txt and RUL_FD001.txt to enable those checks.
CMAPSS_DIR = Path(os.environ.get("CMAPSS_DIR", Path(__file__).resolve().parents[1] / "data"))

ACCEPTANCE_RESULTS = []


def fd001_paths():
    paths = [CMAPSS_DIR / f"{name}_FD001.txt" for name in ("train", "test", "RUL")]
    return paths if all(p.exists() for p in paths) else None


TINY = ModelConfig(
    n_features=4, window=6, filters1=4, filters2=6, hidden=3,
    attention_units=5, fc1_units=5, fc2_units=4,
)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthConfig(n_engines=12, min_life=40, max_life=120,
                                n_constant_sensors=3, noise_std=0.1, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{status:4s}  {label}  {detail}")

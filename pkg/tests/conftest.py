import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cmga.model import Modality, ModelConfig, init_parameters  # noqa: E402


@pytest.fixture
def tiny_config():
    return ModelConfig(
        raw_dims={Modality.TEXT: 5, Modality.VIDEO: 6, Modality.AUDIO: 7},
        d_k=8,
        n_heads=2,
        seq_len=3,
        seed=11,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return init_parameters(tiny_config)


def random_utterances(config, n=None, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    lead = (config.seq_len,) if n is None else (n, config.seq_len)
    return {m: scale * rng.standard_normal((*lead, d)) for m, d in config.raw_dims.items()}


@pytest.fixture
def utterances():
    return random_utterances


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, status, note = results[n]
        suffix = f"  ({note})" if note else ""
        terminalreporter.write_line(f"criterion {n}: {status}  {title}{suffix}")

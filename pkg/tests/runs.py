"""Shared, cached training runs for the slow learning checks.

Several tests look at the same 50-epoch runs; caching them keeps the suite
to one pass per seed.
"""

from functools import lru_cache

from cmga.data import SyntheticSpec, generate_synthetic
from cmga.model import ModelConfig, init_parameters
from cmga.training import train

LEARN_SEEDS = (0, 1, 2)
LEARN_EPOCHS = 50


@lru_cache(maxsize=None)
def interaction_data(seed=0, n=2000):
    return generate_synthetic(SyntheticSpec(n_examples=n, dims=16, seq_len=4, alpha=0.9, noise=0.1, seed=seed))


def interaction_config(seed=0, **kw):
    return ModelConfig(raw_dims={"text": 16, "video": 16, "audio": 16}, d_k=32, n_heads=2, seq_len=4, seed=seed, **kw)


@lru_cache(maxsize=None)
def learning_run(seed):
    """Train on the full interaction set for 50 epochs at the default lr."""
    model = init_parameters(interaction_config(seed))
    report = train(model, interaction_data(), epochs=LEARN_EPOCHS, batch_size=32, seed=seed, lr=1e-4)
    return model, report


def smoothed_violations(losses, window=10):
    """Count steps where the trailing ``window``-epoch mean goes up."""
    means = [sum(losses[k : k + window]) / window for k in range(len(losses) - window + 1)]
    return sum(1 for a, b in zip(means, means[1:]) if b > a)

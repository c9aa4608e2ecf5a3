import json

import numpy as np
import pytest

from cmga.ablation import REPORT_NOTE, AblationError, AblationVariant, apply_variant, run_matrix
from cmga.data import SyntheticSpec, generate_synthetic, split_dataset
from cmga.model import (
    DEFAULT_PAIRS,
    ConfigError,
    Modality,
    PairSpec,
    forward,
    init_parameters,
    iter_pair_groups,
    parameter_shapes,
)
from cmga.training import evaluate_model, train
from conftest import random_utterances

T, V, A = Modality.TEXT, Modality.VIDEO, Modality.AUDIO


@pytest.fixture
def data():
    return generate_synthetic(SyntheticSpec(n_examples=60, dims={"text": 5, "video": 6, "audio": 7}, seq_len=3, seed=1))


@pytest.mark.parametrize(
    "text, kind, name, token",
    [
        ("none", "none", "CMGA", "none"),
        ("drop:text", "drop_modality", "(-) text", "drop:text"),
        ("drop_modality:a", "drop_modality", "(-) audio", "drop:audio"),
        ("no-cross-attention", "no_cross_attention", "(-) cross-attention", "no_cross_attention"),
        ("no_forget_gate", "no_forget_gate", "(-) forget gate", "no_forget_gate"),
        ("bidirectional", "bidirectional", "(+) bi-directional", "bidirectional"),
        ("reverse:v,a", "reverse_pair", "~(video, audio)", "reverse:v,a"),
        ("reverse_pair:(text, video)", "reverse_pair", "~(text, video)", "reverse:t,v"),
    ],
)
def test_parse(text, kind, name, token):
    v = AblationVariant.parse(text)
    assert (v.kind, v.name, v.token) == (kind, name, token)
    assert AblationVariant.parse(v.token) == v


@pytest.mark.parametrize("text", ["shuffle", "drop:smell", "drop", "reverse:t", "none:x", "reverse:t,t"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        AblationVariant.parse(text)


def test_none_is_identity(tiny_config):
    assert apply_variant(tiny_config, AblationVariant()) == tiny_config


def test_drop_text_leaves_video_audio(tiny_config):
    cfg = apply_variant(tiny_config, AblationVariant.parse("drop:text"))
    assert cfg.pairs == (PairSpec(V, A),)
    assert parameter_shapes(cfg)["out.W_o"] == (tiny_config.d_h, 1)
    assert T not in cfg.used_modalities


def test_drop_each_modality_keeps_one_pair(tiny_config):
    for m in (T, V, A):
        cfg = apply_variant(tiny_config, AblationVariant("drop_modality", modality=m))
        assert len(cfg.pairs) == 1
        assert all(m not in (p.source, p.query) for p in cfg.pairs)


def test_bidirectional_doubles_pair_parameters(tiny_config):
    cfg = apply_variant(tiny_config, AblationVariant.parse("bidirectional"))
    assert len(cfg.pairs) == 6
    assert set(cfg.pairs) == set(DEFAULT_PAIRS) | {p.reversed() for p in DEFAULT_PAIRS}
    base_shapes, new_shapes = parameter_shapes(tiny_config), parameter_shapes(cfg)

    def pair_count(shapes, names):
        return sum(int(np.prod(shapes[n])) for n in names)

    assert pair_count(new_shapes, iter_pair_groups(cfg)) == 2 * pair_count(base_shapes, iter_pair_groups(tiny_config))
    assert new_shapes["out.W_o"][0] == 2 * base_shapes["out.W_o"][0]


def test_component_flags(tiny_config):
    assert apply_variant(tiny_config, AblationVariant.parse("no_cross_attention")).use_cross_attention is False
    assert apply_variant(tiny_config, AblationVariant.parse("no_forget_gate")).use_forget_gate is False


def test_reverse_swaps_in_place(tiny_config):
    cfg = apply_variant(tiny_config, AblationVariant.parse("reverse:v,a"))
    assert cfg.pairs == (PairSpec(T, V), PairSpec(A, V), PairSpec(T, A))


def test_invalid_against_base(tiny_config):
    only_tv = tiny_config.replace(pairs=(PairSpec(T, V),))
    with pytest.raises(ConfigError, match="not in the base"):
        apply_variant(only_tv, AblationVariant.parse("reverse:v,a"))
    with pytest.raises(ConfigError, match="no configured pair"):
        apply_variant(only_tv, AblationVariant.parse("drop:audio"))
    with pytest.raises(ConfigError, match="leaves no"):
        apply_variant(only_tv, AblationVariant.parse("drop:text"))
    both = tiny_config.replace(pairs=(PairSpec(T, V), PairSpec(V, T)))
    with pytest.raises(ConfigError, match="duplicate"):
        apply_variant(both, AblationVariant.parse("reverse:t,v"))


@pytest.mark.parametrize(
    "text", ["none", "drop:text", "drop:video", "drop:audio", "no_cross_attention", "no_forget_gate",
             "bidirectional", "reverse:t,v", "reverse:v,a", "reverse:t,a"]
)
def test_every_variant_is_pure_and_runs(tiny_config, text):
    snapshot = tiny_config.to_dict()
    cfg = apply_variant(tiny_config, AblationVariant.parse(text))
    assert tiny_config.to_dict() == snapshot
    cfg.validate()
    out = forward(init_parameters(cfg), random_utterances(cfg, n=2))
    assert out.shape == (2,) and np.all(np.isfinite(out.data))


def test_reverse_changes_predictions_not_size(tiny_config):
    base = init_parameters(tiny_config)
    rev = init_parameters(apply_variant(tiny_config, AblationVariant.parse("reverse:v,a")))
    assert rev.n_parameters() == base.n_parameters()
    x = random_utterances(tiny_config, n=5, seed=3)
    assert np.max(np.abs(forward(base, x).data - forward(rev, x).data)) > 1e-6


def test_single_cell_matches_direct_run(tiny_config, data):
    base = tiny_config.replace(seed=0)
    result = run_matrix(base, data, [AblationVariant()], [7], epochs=2, batch_size=8)
    train_set, _, test_set = split_dataset(data, seed=0)
    model = init_parameters(base.replace(seed=7))
    train(model, train_set, epochs=2, batch_size=8, seed=7)
    assert result.results[("none", 7)] == evaluate_model(model, test_set)


def test_table_and_records(tiny_config, data):
    variants = [AblationVariant.parse(v) for v in ("none", "drop:text", "reverse:v,a")]
    result = run_matrix(tiny_config, data, variants, [1, 2], epochs=1, batch_size=16)
    text = result.to_text()
    lines = text.splitlines()
    assert lines[0] == f"# {REPORT_NOTE}"
    assert lines[2].split() == ["Model", "MAE", "corr", "F-score", "Acc-2", "Acc-7"]
    assert [ln.split()[0] for ln in lines[3:]] == ["CMGA", "(-)", "~(video,"]
    recs = [json.loads(x) for x in result.to_records().splitlines()]
    assert len(recs) == 6
    assert {r["variant"] for r in recs} == {"none", "drop:text", "reverse:v,a"}
    mean = result.mean(variants[0])["mae"]
    assert mean == pytest.approx(np.mean([r["mae"] for r in recs if r["variant"] == "none"]))


def test_parallel_matches_serial(tiny_config, data):
    variants = [AblationVariant(), AblationVariant.parse("no_forget_gate")]
    serial = run_matrix(tiny_config, data, variants, [1, 2], epochs=1, batch_size=16)
    parallel = run_matrix(tiny_config, data, variants, [1, 2], epochs=1, batch_size=16, workers=2)
    assert serial.results == parallel.results


def test_errors_name_the_variant(tiny_config, data):
    with pytest.raises(AblationError, match=r"variant \(-\) forget gate \(seed 1\)"):
        run_matrix(tiny_config, data, [AblationVariant.parse("no_forget_gate")], [1], batch_size=0)
    with pytest.raises(ValueError, match="at least one"):
        run_matrix(tiny_config, data, [], [1])


def test_explicit_test_set(tiny_config, data):
    other = generate_synthetic(SyntheticSpec(n_examples=20, dims={"text": 5, "video": 6, "audio": 7}, seq_len=3, seed=9))
    result = run_matrix(tiny_config, data, [AblationVariant()], [3], epochs=1, test_set=other)
    assert result.results[("none", 3)].n_total == 20


import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmga.metrics import EvalResult, MetricError, acc7, binary_scores, evaluate_all, mae, pearson_corr, seven_class
from oracles import scalar_metrics

# six examples covering a zero label, a zero prediction, clamping and a half-way rounding case
FIXTURE_PRED = [2.7, -0.4, 0.0, 1.5, -3.8, 0.9]
FIXTURE_LABEL = [3.0, -1.2, 0.6, 0.0, -2.5, -0.3]


def test_mae_examples():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([0], [2]) == 2.0
    assert mae([1, -1], [0, 0]) == 1.0


def test_mae_errors():
    with pytest.raises(MetricError, match="length mismatch"):
        mae([1, 2], [1])
    with pytest.raises(MetricError, match="empty"):
        mae([], [])


def test_pearson_examples():
    y = [0.3, -1.0, 2.0, 0.5]
    assert pearson_corr(y, y) == pytest.approx(1.0, abs=1e-15)
    assert pearson_corr([-v for v in y], y) == pytest.approx(-1.0, abs=1e-15)
    with pytest.raises(MetricError, match="constant"):
        pearson_corr([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(MetricError, match="two"):
        pearson_corr([1.0], [2.0])


def test_binary_examples():
    assert binary_scores([1, -1], [2, -0.5])[:2] == (1.0, 1.0)
    acc, f, n = binary_scores([-5, 2], [0, 1])
    assert (acc, n) == (1.0, 1)
    acc, f, _ = binary_scores([1, 1, -1, -1], [1, -1, 1, -1])
    # each class: tp 1, fp 1, fn 1 -> F1 = 2/4; both supports are 2
    assert acc == 0.5
    assert f == 0.5


def test_zero_prediction_counts_positive():
    assert binary_scores([0.0], [1.0])[0] == 1.0
    assert binary_scores([0.0], [-1.0])[0] == 0.0


def test_all_zero_labels():
    with pytest.raises(MetricError, match="all labels are zero"):
        binary_scores([1, 2], [0, 0])


def test_acc7_examples():
    y = [-3, -1.4, 0.2, 2.5]
    assert acc7(y, y) == 1.0
    assert acc7([3.6], [3]) == 1.0
    assert acc7([2.4], [2.6]) == 0.0


def test_seven_class_rounds_half_away_from_zero():
    assert seven_class([-0.5, 0.5, 1.5, -2.5, 0.49, -0.49]).tolist() == [-1, 1, 2, -3, 0, 0]
    assert seven_class([-9.0, 9.0]).tolist() == [-3, 3]


def test_evaluate_all_perfect():
    y = [-2.0, -0.5, 1.0, 2.5, 0.7]
    r = evaluate_all(y, y)
    assert (r.mae, r.corr, r.acc2, r.f_score, r.acc7) == (0.0, pytest.approx(1.0, abs=1e-15), 1.0, 1.0, 1.0)


def test_evaluate_all_matches_scalar_reference():
    r = evaluate_all(FIXTURE_PRED, FIXTURE_LABEL)
    ref = scalar_metrics(FIXTURE_PRED, FIXTURE_LABEL)
    for key in ("mae", "corr", "acc2", "f_score", "acc7"):
        assert abs(getattr(r, key) - ref[key]) <= 1e-12, key
    assert r.n_binary == ref["n_binary"] == 5
    assert r.n_total == 6


def test_evaluate_all_empty():
    with pytest.raises(MetricError):
        evaluate_all([], [])


def test_record_and_row_formatting():
    r = EvalResult(mae=0.7904, corr=0.8213, f_score=0.86017, acc2=0.8605, acc7=0.4331, n_total=10, n_binary=9)
    assert r.cells() == ["0.790", "0.821", "86.0", "86.1", "43.3"]
    assert r.to_record()["n_binary"] == 9
    assert r.format_row("CMGA").split() == ["CMGA", "0.790", "0.821", "86.0", "86.1", "43.3"]
    assert EvalResult.header_row().split() == ["Model", "MAE", "corr", "F-score", "Acc-2", "Acc-7"]


finite = st.floats(-4, 4, allow_nan=False)
vectors = st.lists(st.tuples(finite, finite), min_size=2, max_size=30)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_acc7_class_mapping_is_idempotent(pairs):
    p, y = map(np.array, zip(*pairs))
    assert acc7(p, y) == acc7(seven_class(p), seven_class(y))


@settings(max_examples=60, deadline=None)
@given(vectors, st.floats(1e-3, 1e3))
def test_binary_scores_ignore_positive_scale(pairs, c):
    p, y = map(np.array, zip(*pairs))
    if not np.any(y != 0):
        return
    assert binary_scores(p, y) == binary_scores(c * p, y)


@settings(max_examples=60, deadline=None)
@given(vectors, st.integers(-8, 8))
def test_mae_translation(pairs, shift):
    # integer shifts keep the float arithmetic exact enough for a tight bound
    p, y = map(np.array, zip(*pairs))
    assert mae(p + shift, y + shift) == pytest.approx(mae(p, y), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(vectors, st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_invariance(pairs, a, b, c, d):
    p, y = map(np.array, zip(*pairs))
    if np.ptp(p) < 1e-3 or np.ptp(y) < 1e-3:
        return
    r = pearson_corr(p, y)
    assert -1.0 <= r <= 1.0
    assert pearson_corr(a * p + b, c * y + d) == pytest.approx(r, abs=1e-9)

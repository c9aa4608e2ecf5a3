import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cmga.data import SyntheticSpec, generate_synthetic
from cmga.estimator import CmgaRegressor, check_modalities, unflatten_features
from cmga.model import MODALITY_ORDER, forward, init_parameters
from cmga.training import train

DIMS = {"text": 3, "video": 4, "audio": 2}


@pytest.fixture
def data():
    return generate_synthetic(SyntheticSpec(n_examples=30, dims=DIMS, seq_len=3, seed=4))


def small(**kw):
    return CmgaRegressor(d_k=8, epochs=2, batch_size=8, **kw)


def test_get_params_and_clone():
    est = small(random_state=3)
    params = est.get_params()
    assert params["d_k"] == 8 and params["random_state"] == 3 and params["lr"] == 1e-4
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(n_heads=4)
    assert est.n_heads == 4


def test_defaults():
    p = CmgaRegressor().get_params()
    assert (p["d_k"], p["batch_size"], p["lr"], p["epochs"]) == (128, 32, 1e-4, 50)


def test_fit_on_dataset_matches_direct_training(data):
    est = small(random_state=5).fit(data)
    model = init_parameters(est.config_)
    train(model, data, epochs=2, batch_size=8, seed=5, lr=1e-4)
    np.testing.assert_array_equal(est.predict(data), forward(model, data.inputs()).data)
    assert est.n_parameters_ == model.n_parameters()


def test_mapping_and_flat_inputs_agree(data):
    feats = {m.value: data.features[m] for m in MODALITY_ORDER}
    flat = np.concatenate([data.features[m].reshape(len(data), -1) for m in MODALITY_ORDER], axis=1)
    a = small().fit(feats, data.labels)
    b = small(raw_dims=DIMS, seq_len=3).fit(flat, data.labels)
    np.testing.assert_array_equal(a.predict(feats), b.predict(flat))
    assert a.predict(feats).shape == (30,)


def test_score_is_r2(data):
    est = small().fit(data, data.labels)
    pred = est.predict(data)
    y = data.labels
    expected = 1 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
    assert est.score(data, y) == pytest.approx(expected)


def test_predict_before_fit(data):
    with pytest.raises(NotFittedError):
        small().predict(data)


def test_input_validation(data):
    feats = {m.value: data.features[m] for m in MODALITY_ORDER}
    with pytest.raises(ValueError, match="y is required"):
        small().fit(feats)
    with pytest.raises(ValueError):
        small().fit(feats, data.labels[:-1])
    with pytest.raises(ValueError, match="raw_dims and seq_len"):
        small().fit(np.zeros((4, 10)), np.zeros(4))
    est = small().fit(data)
    with pytest.raises(ValueError, match="fitted on"):
        est.predict({m: a[:, :2] for m, a in feats.items()})
    with pytest.raises(ValueError, match="missing modalities"):
        est.predict({"text": feats["text"]})


def test_check_modalities():
    good = {"t": np.zeros((2, 3, 1)), "video": np.zeros((2, 3, 2))}
    out = check_modalities(good)
    assert set(out) == {MODALITY_ORDER[0], MODALITY_ORDER[1]}
    with pytest.raises(ValueError, match=r"\(n, L, d\)"):
        check_modalities({"text": np.zeros((2, 3))})
    with pytest.raises(ValueError, match="sequence length"):
        check_modalities({"text": np.zeros((2, 3, 1)), "audio": np.zeros((2, 4, 1))})
    with pytest.raises(ValueError):
        check_modalities({"text": np.full((2, 3, 1), np.nan)})
    with pytest.raises(TypeError):
        check_modalities([1, 2])


def test_unflatten_layout():
    X = np.arange(2 * (2 * 1 + 2 * 2 + 2 * 1), dtype=float).reshape(2, -1)
    out = unflatten_features(X, {"text": 1, "video": 2, "audio": 1}, seq_len=2)
    assert out[MODALITY_ORDER[0]][0].tolist() == [[0.0], [1.0]]
    assert out[MODALITY_ORDER[1]][0].tolist() == [[2.0, 3.0], [4.0, 5.0]]
    with pytest.raises(ValueError, match="columns"):
        unflatten_features(X[:, :-1], {"text": 1, "video": 2, "audio": 1}, seq_len=2)

"""scikit-learn style wrapper around the CMGA model."""

from __future__ import annotations

from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_array, check_consistent_length
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .model import DEFAULT_PAIRS, MODALITY_ORDER, Modality, ModelConfig, init_parameters
from .training import DEFAULT_BATCH_SIZE, DEFAULT_LR, train

__all__ = ["CmgaRegressor", "check_modalities", "unflatten_features"]


def unflatten_features(X, raw_dims: Mapping, seq_len: int) -> dict[Modality, np.ndarray]:
    """Split a 2-D ``(n, L * (d_t + d_v + d_a))`` array into per-modality blocks.

    Columns are laid out text, video, audio; inside each block the ``L`` rows
    of one utterance are concatenated.
    """
    X = check_array(X, dtype=np.float64)
    dims = {Modality.parse(k): int(v) for k, v in dict(raw_dims).items()}
    widths = [seq_len * dims[m] for m in MODALITY_ORDER]
    if X.shape[1] != sum(widths):
        raise ValueError(
            f"X has {X.shape[1]} columns; raw_dims {[dims[m] for m in MODALITY_ORDER]} "
            f"with seq_len {seq_len} need {sum(widths)}"
        )
    out, lo = {}, 0
    for m, w in zip(MODALITY_ORDER, widths):
        out[m] = X[:, lo : lo + w].reshape(len(X), seq_len, dims[m])
        lo += w
    return out


def check_modalities(X) -> dict[Modality, np.ndarray]:
    """Validate a modality -> ``(n, L, d)`` mapping and coerce it to float arrays."""
    if not isinstance(X, Mapping):
        raise TypeError(f"expected a mapping of modality to arrays, got {type(X).__name__}")
    out = {}
    for k, v in X.items():
        m = Modality.parse(k)
        arr = check_array(v, dtype=np.float64, allow_nd=True, ensure_2d=False)
        if arr.ndim != 3:
            raise ValueError(f"{m.value} features must be (n, L, d), got shape {arr.shape}")
        out[m] = arr
    if not out:
        raise ValueError("no modality features given")
    check_consistent_length(*out.values())
    if len({a.shape[1] for a in out.values()}) != 1:
        raise ValueError("all modalities must share the same sequence length")
    return out


class CmgaRegressor(RegressorMixin, BaseEstimator):
    """Sentiment regressor with fit/predict over tri-modal sequences.

    ``X`` may be a :class:`Dataset` (labels taken from it when ``y`` is None),
    a mapping of modality to ``(n, L, d)`` arrays, or a flat 2-D array, which
    needs ``raw_dims`` and ``seq_len`` to be unpacked.
    """

    def __init__(
        self,
        d_k=128,
        n_heads=2,
        pairs=None,
        use_cross_attention=True,
        use_forget_gate=True,
        epochs=50,
        batch_size=DEFAULT_BATCH_SIZE,
        lr=DEFAULT_LR,
        random_state=0,
        raw_dims=None,
        seq_len=None,
    ):
        self.d_k = d_k
        self.n_heads = n_heads
        self.pairs = pairs
        self.use_cross_attention = use_cross_attention
        self.use_forget_gate = use_forget_gate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.random_state = random_state
        self.raw_dims = raw_dims
        self.seq_len = seq_len

    def _features(self, X) -> dict[Modality, np.ndarray]:
        if isinstance(X, Dataset):
            return dict(X.features)
        if isinstance(X, Mapping):
            return check_modalities(X)
        if self.raw_dims is None or self.seq_len is None:
            raise ValueError("flat 2-D input needs raw_dims and seq_len to be set")
        return unflatten_features(X, self.raw_dims, self.seq_len)

    def _as_dataset(self, feats, y) -> Dataset:
        n = len(next(iter(feats.values())))
        if y is None:
            y = np.zeros(n)
        y = check_array(y, dtype=np.float64, ensure_2d=False)
        if y.ndim != 1:
            raise ValueError(f"y must be 1-D, got shape {y.shape}")
        check_consistent_length(y, *feats.values())
        return Dataset([str(k) for k in range(n)], feats, y)

    def fit(self, X, y=None):
        if y is None and isinstance(X, Dataset):
            y = X.labels
        if y is None:
            raise ValueError("y is required unless X is a Dataset")
        feats = self._features(X)
        data = self._as_dataset(feats, y)
        self.config_ = ModelConfig(
            raw_dims=data.raw_dims,
            d_k=self.d_k,
            n_heads=self.n_heads,
            seq_len=data.seq_len,
            pairs=DEFAULT_PAIRS if self.pairs is None else tuple(self.pairs),
            use_cross_attention=self.use_cross_attention,
            use_forget_gate=self.use_forget_gate,
            seed=self.random_state,
        )
        self.model_ = init_parameters(self.config_)
        self.train_report_ = train(
            self.model_, data, epochs=self.epochs, batch_size=self.batch_size, seed=self.random_state, lr=self.lr
        )
        self.n_parameters_ = self.model_.n_parameters()
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        feats = self._features(X)
        missing = [m.value for m in self.config_.used_modalities if m not in feats]
        if missing:
            raise ValueError(f"missing modalities: {', '.join(missing)}")
        for m in self.config_.used_modalities:
            if feats[m].shape[1:] != (self.config_.seq_len, self.config_.raw_dims[m]):
                raise ValueError(
                    f"{m.value} features have shape {feats[m].shape[1:]}, fitted on "
                    f"{(self.config_.seq_len, self.config_.raw_dims[m])}"
                )
        n = len(feats[self.config_.used_modalities[0]])
        chunks = [
            self.model_.predict({m: feats[m][lo : lo + 512] for m in self.config_.used_modalities})
            for lo in range(0, n, 512)
        ]
        return np.concatenate(chunks)

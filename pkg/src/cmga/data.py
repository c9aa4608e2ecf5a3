"""Datasets of labelled utterances: synthetic generation, JSONL I/O, splitting.

A :class:`Dataset` keeps one ``(n, L, d_m)`` array per modality so whole
minibatches can be sliced out without copying record by record.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .model import MODALITY_ORDER, Modality

__all__ = [
    "LABEL_MIN",
    "LABEL_MAX",
    "DatasetError",
    "UtteranceRecord",
    "Dataset",
    "SyntheticSpec",
    "generate_synthetic",
    "synthetic_directions",
    "latent_factors",
    "save_dataset",
    "load_dataset",
    "split_dataset",
]

LABEL_MIN, LABEL_MAX = -3.0, 3.0


class DatasetError(ValueError):
    """Malformed, out-of-range or inconsistent dataset content."""


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    text: np.ndarray
    video: np.ndarray
    audio: np.ndarray
    label: float

    def features(self) -> dict[Modality, np.ndarray]:
        return {Modality.TEXT: self.text, Modality.VIDEO: self.video, Modality.AUDIO: self.audio}


class Dataset:
    """Immutable collection of utterances sharing one sequence length."""

    def __init__(self, ids: Sequence[str], features: Mapping, labels):
        self.ids = [str(i) for i in ids]
        self.labels = np.array(labels, dtype=np.float64).reshape(-1)
        self.features = {
            Modality.parse(k): np.array(v, dtype=np.float64) for k, v in features.items()
        }
        n = len(self.ids)
        if n < 1:
            raise DatasetError("dataset is empty")
        if self.labels.shape != (n,):
            raise DatasetError(f"{n} ids but {self.labels.size} labels")
        if set(self.features) != set(MODALITY_ORDER):
            raise DatasetError("every modality (text, video, audio) must be present")
        lengths = set()
        for m, arr in self.features.items():
            if arr.ndim != 3 or arr.shape[0] != n:
                raise DatasetError(f"{m.value} features must be shaped (n, L, d), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DatasetError(f"{m.value} features contain non-finite values")
            lengths.add(arr.shape[1])
        if len(lengths) != 1:
            raise DatasetError(f"modalities disagree on sequence length: {sorted(lengths)}")
        if not np.all(np.isfinite(self.labels)):
            raise DatasetError("labels contain non-finite values")
        bad = np.flatnonzero((self.labels < LABEL_MIN) | (self.labels > LABEL_MAX))
        if bad.size:
            raise DatasetError(f"label {self.labels[bad[0]]!r} of {self.ids[bad[0]]!r} outside [-3, 3]")
        for arr in self.features.values():
            arr.setflags(write=False)
        self.labels.setflags(write=False)

    @classmethod
    def from_records(cls, records: Sequence[UtteranceRecord]) -> "Dataset":
        if not records:
            raise DatasetError("dataset is empty")
        feats = {}
        for m in MODALITY_ORDER:
            shapes = {np.shape(getattr(r, m.value)) for r in records}
            if len(shapes) != 1:
                raise DatasetError(f"{m.value} matrices have differing shapes: {sorted(shapes)}")
            feats[m] = np.stack([np.asarray(getattr(r, m.value), dtype=np.float64) for r in records])
        return cls([r.id for r in records], feats, [r.label for r in records])

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[UtteranceRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i: int) -> UtteranceRecord:
        f = self.features
        return UtteranceRecord(
            self.ids[i], f[Modality.TEXT][i], f[Modality.VIDEO][i], f[Modality.AUDIO][i], float(self.labels[i])
        )

    @property
    def seq_len(self) -> int:
        return self.features[Modality.TEXT].shape[1]

    @property
    def raw_dims(self) -> dict[Modality, int]:
        return {m: self.features[m].shape[2] for m in MODALITY_ORDER}

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            [self.ids[i] for i in index],
            {m: a[index] for m, a in self.features.items()},
            self.labels[index],
        )

    def inputs(self, index=None) -> dict[Modality, np.ndarray]:
        if index is None:
            return dict(self.features)
        return {m: a[index] for m, a in self.features.items()}

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.ids == other.ids
            and _bit_equal(self.labels, other.labels)
            and all(_bit_equal(self.features[m], other.features[m]) for m in MODALITY_ORDER)
        )

    __hash__ = None


def _bit_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.astype("<f8").tobytes() == b.astype("<f8").tobytes()


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic interaction task.

    ``alpha`` moves signal from unimodal linear terms (0) to pairwise
    bilinear terms (1).
    """

    n_examples: int = 1000
    dims: Mapping = field(default_factory=lambda: {Modality.TEXT: 16, Modality.VIDEO: 16, Modality.AUDIO: 16})
    seq_len: int = 8
    alpha: float = 0.5
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        dims = self.dims
        if isinstance(dims, int):
            dims = {m: dims for m in MODALITY_ORDER}
        dims = {Modality.parse(k): int(v) for k, v in dict(dims).items()}
        object.__setattr__(self, "dims", dims)
        if self.n_examples < 1:
            raise DatasetError(f"n_examples must be >= 1, got {self.n_examples}")
        if set(dims) != set(MODALITY_ORDER) or min(dims.values()) < 1:
            raise DatasetError(f"dims must give a positive width for each modality, got {dims}")
        if self.seq_len < 1:
            raise DatasetError(f"seq_len must be >= 1, got {self.seq_len}")
        if not 0.0 <= self.alpha <= 1.0:
            raise DatasetError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.noise >= 0.0:
            raise DatasetError(f"noise must be >= 0, got {self.noise}")

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "dims": {m.value: self.dims[m] for m in MODALITY_ORDER},
            "seq_len": self.seq_len,
            "alpha": self.alpha,
            "noise": self.noise,
            "seed": self.seed,
        }


_PAIR_TERMS = ((Modality.TEXT, Modality.VIDEO), (Modality.VIDEO, Modality.AUDIO), (Modality.TEXT, Modality.AUDIO))


def synthetic_directions(spec: SyntheticSpec) -> dict[Modality, np.ndarray]:
    """Unit read-out direction per modality; drawn from its own seeded stream."""
    rng = np.random.default_rng([spec.seed, 1])
    out = {}
    for m in MODALITY_ORDER:
        w = rng.standard_normal(spec.dims[m])
        out[m] = w / np.linalg.norm(w)
    return out


def latent_factors(spec: SyntheticSpec, features: Mapping[Modality, np.ndarray]) -> dict[Modality, np.ndarray]:
    """Observable per-utterance factor of each modality, unit variance under the generator.

    It is the sequence mean projected on the modality's direction, so labels
    are an exact function of the features.
    """
    dirs = synthetic_directions(spec)
    norm = math.sqrt(1.0 + 1.0 / spec.seq_len)
    return {m: features[m].mean(axis=1) @ dirs[m] / norm for m in MODALITY_ORDER}


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw features around a hidden utterance-level factor and label them.

    Every position of modality ``m`` is ``c_m * w_m + e`` with ``c_m`` and
    ``e`` standard normal and ``w_m`` a fixed unit direction. With ``s_m`` the
    observable factor from :func:`latent_factors`, the raw score is
    ``(1 - alpha) * sum_m s_m + alpha * sum_pairs s_i * s_j + noise``; it is
    divided by its exact standard deviation and clipped to [-3, 3].
    """
    rng = np.random.default_rng([spec.seed, 0])
    n, L = spec.n_examples, spec.seq_len
    dirs = synthetic_directions(spec)
    feats = {}
    for m in MODALITY_ORDER:
        hidden = rng.standard_normal(n)
        feats[m] = hidden[:, None, None] * dirs[m] + rng.standard_normal((n, L, spec.dims[m]))
    noise = rng.standard_normal(n) * spec.noise
    s = latent_factors(spec, feats)
    linear = sum(s[m] for m in MODALITY_ORDER)
    bilinear = sum(s[i] * s[j] for i, j in _PAIR_TERMS)
    raw = (1.0 - spec.alpha) * linear + spec.alpha * bilinear + noise
    # linear and pairwise-product terms are uncorrelated, each with variance 3
    std = math.sqrt(3.0 * (1.0 - spec.alpha) ** 2 + 3.0 * spec.alpha**2 + spec.noise**2)
    labels = np.clip(raw / std, LABEL_MIN, LABEL_MAX)
    ids = [f"syn-{spec.seed}-{k:06d}" for k in range(n)]
    return Dataset(ids, feats, labels)


def _fmt(x: float) -> str:
    text = format(float(x), ".17g")
    # "-0" would parse back as the integer 0 and lose its sign
    return text if any(c in text for c in ".en") else text + ".0"


def _matrix(rows: np.ndarray) -> str:
    return "[" + ",".join("[" + ",".join(_fmt(v) for v in row) + "]" for row in rows) + "]"


def save_dataset(dataset: Dataset, path) -> None:
    """One JSON object per line: id, label, then text/video/audio row arrays.

    Numbers are written with 17 significant digits so every float64 value
    survives the round trip.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in dataset:
            parts = [f'"id":{json.dumps(rec.id)}', f'"label":{_fmt(rec.label)}']
            parts += [f'"{m.value}":{_matrix(getattr(rec, m.value))}' for m in MODALITY_ORDER]
            fh.write("{" + ",".join(parts) + "}\n")


def _parse_matrix(obj, where: str, name: str) -> np.ndarray:
    if not isinstance(obj, list) or not obj:
        raise DatasetError(f"{where}: {name} must be a non-empty array of rows")
    widths = set()
    for row in obj:
        if not isinstance(row, list) or not row:
            raise DatasetError(f"{where}: {name} rows must be non-empty arrays")
        widths.add(len(row))
    if len(widths) != 1:
        raise DatasetError(f"{where}: ragged {name} matrix (row widths {sorted(widths)})")
    for row in obj:
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise DatasetError(f"{where}: {name} holds a non-numeric value {v!r}")
    arr = np.array(obj, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{where}: {name} holds non-finite values")
    return arr


def load_dataset(path) -> Dataset:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{where}: malformed record ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DatasetError(f"{where}: record must be a JSON object")
            missing = [k for k in ("id", "label", "text", "video", "audio") if k not in obj]
            if missing:
                raise DatasetError(f"{where}: missing field(s) {', '.join(missing)}")
            label = obj["label"]
            if isinstance(label, bool) or not isinstance(label, (int, float)) or not math.isfinite(label):
                raise DatasetError(f"{where}: label must be a finite number")
            if not LABEL_MIN <= label <= LABEL_MAX:
                raise DatasetError(f"{where}: label {label!r} outside [-3, 3]")
            mats = {m.value: _parse_matrix(obj[m.value], where, m.value) for m in MODALITY_ORDER}
            lengths = {a.shape[0] for a in mats.values()}
            if len(lengths) != 1:
                raise DatasetError(f"{where}: modalities disagree on sequence length {sorted(lengths)}")
            if records:
                first = records[0]
                for name, a in mats.items():
                    if a.shape != getattr(first, name).shape:
                        raise DatasetError(
                            f"{where}: {name} shape {a.shape} differs from earlier records "
                            f"{getattr(first, name).shape}"
                        )
            records.append(UtteranceRecord(str(obj["id"]), mats["text"], mats["video"], mats["audio"], float(label)))
    if not records:
        raise DatasetError(f"{path}: no records")
    return Dataset.from_records(records)


def split_dataset(dataset: Dataset, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Seeded shuffle, then contiguous train/validation/test blocks.

    Block boundaries are the rounded cumulative fractions, so the parts are
    disjoint and cover every record. Empty parts come back as ``None``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(not f > 0 for f in fractions):
        raise DatasetError(f"need three positive fractions, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    cuts = [0]
    acc = 0.0
    for f in fractions[:-1]:
        acc += f
        cuts.append(int(round(acc * n)))
    cuts.append(n)
    return tuple(
        dataset.subset(order[lo:hi]) if hi > lo else None for lo, hi in zip(cuts[:-1], cuts[1:])
    )

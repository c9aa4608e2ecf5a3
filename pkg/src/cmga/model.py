"""Cross-modality gated attention model.

Each modality is projected to a shared width ``d_k``. For every ordered pair
``(i, j)`` the query side ``j`` attends over the key/value side ``i``; a
sigmoid forget vector built from the attention output and ``z_j`` scales a
transformed copy of that output, which is added back onto ``z_i`` and passed
through a ReLU. The per-pair outputs are mean-pooled over the sequence,
stacked, mixed by multi-head self-attention and mapped to one score.

All functions accept single utterances ``(L, d)`` or batches ``(B, L, d)``.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    add,
    concat,
    concat_features,
    hadamard,
    matmul,
    mean_rows,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    transpose,
)

__all__ = [
    "Modality",
    "PairSpec",
    "ModelConfig",
    "ModalityFeatures",
    "CmgaModel",
    "ConfigError",
    "MissingModalityError",
    "CheckpointError",
    "DEFAULT_PAIRS",
    "init_parameters",
    "project_modality",
    "cross_attention",
    "forget_vector",
    "gated_interaction",
    "pool_pair",
    "fuse",
    "forward",
    "save_checkpoint",
    "load_checkpoint",
]


class ConfigError(ValueError):
    pass


class MissingModalityError(KeyError):
    pass


class CheckpointError(ValueError):
    pass


class Modality(str, enum.Enum):
    TEXT = "text"
    VIDEO = "video"
    AUDIO = "audio"

    @property
    def short(self) -> str:
        return self.value[0]

    @classmethod
    def parse(cls, value: "Modality | str") -> "Modality":
        if isinstance(value, Modality):
            return value
        key = str(value).strip().lower()
        for m in cls:
            if key in (m.value, m.short):
                return m
        raise ConfigError(f"unknown modality {value!r}; expected one of text/t, video/v, audio/a")


MODALITY_ORDER = (Modality.TEXT, Modality.VIDEO, Modality.AUDIO)


@dataclass(frozen=True)
class PairSpec:
    """Ordered pair: ``source`` gives keys and values, ``query`` gives queries."""

    source: Modality
    query: Modality

    def __post_init__(self):
        object.__setattr__(self, "source", Modality.parse(self.source))
        object.__setattr__(self, "query", Modality.parse(self.query))
        if self.source == self.query:
            raise ConfigError(f"pair needs two distinct modalities, got ({self.source.value}, {self.query.value})")

    @classmethod
    def parse(cls, text: "str | PairSpec | tuple") -> "PairSpec":
        if isinstance(text, PairSpec):
            return text
        if isinstance(text, (tuple, list)):
            return cls(*text)
        parts = [p for p in str(text).replace("(", "").replace(")", "").replace(",", " ").split() if p]
        if len(parts) == 1 and len(parts[0]) == 2:
            parts = list(parts[0])
        if len(parts) != 2:
            raise ConfigError(f"cannot parse modality pair {text!r}")
        return cls(parts[0], parts[1])

    def reversed(self) -> "PairSpec":
        return PairSpec(self.query, self.source)

    @property
    def key(self) -> str:
        return f"{self.source.short}{self.query.short}"

    def __str__(self) -> str:
        return f"({self.source.value}, {self.query.value})"


DEFAULT_PAIRS = (
    PairSpec(Modality.TEXT, Modality.VIDEO),
    PairSpec(Modality.VIDEO, Modality.AUDIO),
    PairSpec(Modality.TEXT, Modality.AUDIO),
)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``d_h`` is the fusion width; it must equal ``d_k`` because the gated pair
    outputs are stacked into the fusion input unchanged. ``None`` means "same
    as ``d_k``".
    """

    raw_dims: Mapping[Modality, int] = field(
        default_factory=lambda: {Modality.TEXT: 16, Modality.VIDEO: 16, Modality.AUDIO: 16}
    )
    d_k: int = 128
    d_h: int | None = None
    n_heads: int = 2
    seq_len: int = 8
    pairs: tuple[PairSpec, ...] = DEFAULT_PAIRS
    use_cross_attention: bool = True
    use_forget_gate: bool = True
    seed: int = 0

    def __post_init__(self):
        raw = {Modality.parse(k): int(v) for k, v in dict(self.raw_dims).items()}
        object.__setattr__(self, "raw_dims", raw)
        object.__setattr__(self, "pairs", tuple(PairSpec.parse(p) for p in self.pairs))
        if self.d_h is None:
            object.__setattr__(self, "d_h", self.d_k)
        self.validate()

    def validate(self) -> None:
        if self.d_k < 1:
            raise ConfigError(f"d_k must be positive, got {self.d_k}")
        if self.d_h != self.d_k:
            raise ConfigError(f"d_h ({self.d_h}) must equal d_k ({self.d_k})")
        if self.n_heads < 1 or self.d_h % self.n_heads:
            raise ConfigError(f"d_h ({self.d_h}) must be divisible by n_heads ({self.n_heads})")
        if self.seq_len < 1:
            raise ConfigError(f"seq_len must be positive, got {self.seq_len}")
        if not self.pairs:
            raise ConfigError("at least one modality pair is required")
        if len(set(self.pairs)) != len(self.pairs):
            raise ConfigError("modality pairs must be unique")
        for m, d in self.raw_dims.items():
            if d < 1:
                raise ConfigError(f"raw dimension of {m.value} must be positive, got {d}")
        for p in self.pairs:
            for m in (p.source, p.query):
                if m not in self.raw_dims:
                    raise ConfigError(f"pair {p} references {m.value}, which has no raw dimension")

    @property
    def used_modalities(self) -> tuple[Modality, ...]:
        """Modalities the forward pass reads.

        The query side only feeds attention and the forget gate, so with both
        disabled it is never consumed.
        """
        used = {p.source for p in self.pairs}
        if self.use_cross_attention or self.use_forget_gate:
            used |= {p.query for p in self.pairs}
        return tuple(m for m in MODALITY_ORDER if m in used)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "raw_dims": {m.value: self.raw_dims[m] for m in MODALITY_ORDER if m in self.raw_dims},
            "d_k": self.d_k,
            "d_h": self.d_h,
            "n_heads": self.n_heads,
            "seq_len": self.seq_len,
            "pairs": [[p.source.value, p.query.value] for p in self.pairs],
            "use_cross_attention": self.use_cross_attention,
            "use_forget_gate": self.use_forget_gate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        d = dict(d)
        d["pairs"] = tuple(PairSpec(*p) for p in d["pairs"])
        return cls(**d)


@dataclass(frozen=True)
class ModalityFeatures:
    modality: Modality
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality.parse(self.modality))
        v = self.values.data if isinstance(self.values, Tensor) else np.asarray(self.values, dtype=np.float64)
        if v.ndim not in (2, 3) or v.shape[-1] < 1 or v.shape[-2] < 1:
            raise ShapeError(f"{self.modality.value} features must be (L, d_m) or (B, L, d_m), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{self.modality.value} features contain non-finite values")
        object.__setattr__(self, "values", v)


class CmgaModel:
    """A configuration plus its named parameter tensors.

    Parameter names::

        proj.<modality>.W, proj.<modality>.b
        pair.<ij>.W_Q, pair.<ij>.W_K            (only with cross-attention)
        pair.<ij>.W_f, pair.<ij>.b_f            (only with the forget gate)
        pair.<ij>.W_m, pair.<ij>.b_m
        fusion.<n>.W_q, fusion.<n>.W_k, fusion.<n>.W_v
        out.W_o
    """

    def __init__(self, config: ModelConfig, params: Mapping[str, Tensor]):
        self.config = config
        self.params: dict[str, Tensor] = dict(params)
        expected = parameter_shapes(config)
        if list(self.params) != list(expected):
            missing = set(expected) - set(self.params)
            extra = set(self.params) - set(expected)
            if missing or extra:
                raise ConfigError(f"parameter set mismatch; missing={sorted(missing)} extra={sorted(extra)}")
            self.params = {name: self.params[name] for name in expected}
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ConfigError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def copy(self) -> "CmgaModel":
        return CmgaModel(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()},
        )

    def with_config(self, config: ModelConfig) -> "CmgaModel":
        """Re-bind shared parameters under ``config``; new ones are freshly initialised."""
        fresh = init_parameters(config)
        for name in fresh.params:
            if name in self.params and self.params[name].shape == fresh.params[name].shape:
                fresh.params[name] = self.params[name]
        return fresh

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def predict(self, inputs) -> np.ndarray:
        return np.asarray(forward(self, inputs).data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CmgaModel):
            return NotImplemented
        return (
            self.config == other.config
            and list(self.params) == list(other.params)
            and all(
                np.array_equal(a.data, b.data) and a.shape == b.shape
                for a, b in zip(self.params.values(), other.params.values())
            )
        )

    __hash__ = None


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d_k, d_h = config.d_k, config.d_h
    shapes: dict[str, tuple[int, ...]] = {}
    for m in config.used_modalities:
        shapes[f"proj.{m.value}.W"] = (config.raw_dims[m], d_k)
        shapes[f"proj.{m.value}.b"] = (1, d_k)
    for p in config.pairs:
        if config.use_cross_attention:
            shapes[f"pair.{p.key}.W_Q"] = (d_k, d_k)
            shapes[f"pair.{p.key}.W_K"] = (d_k, d_k)
        if config.use_forget_gate:
            shapes[f"pair.{p.key}.W_f"] = (2 * d_k, d_k)
            shapes[f"pair.{p.key}.b_f"] = (1, d_k)
        shapes[f"pair.{p.key}.W_m"] = (d_k, d_k)
        shapes[f"pair.{p.key}.b_m"] = (1, d_k)
    head = d_h // config.n_heads
    for n in range(config.n_heads):
        for w in ("W_q", "W_k", "W_v"):
            shapes[f"fusion.{n}.{w}"] = (d_h, head)
    shapes["out.W_o"] = (len(config.pairs) * d_h, 1)
    return shapes


def init_parameters(config: ModelConfig) -> CmgaModel:
    """Glorot-uniform weights and zero biases, drawn in parameter-name order."""
    if not isinstance(config, ModelConfig):
        raise ConfigError(f"expected a ModelConfig, got {type(config).__name__}")
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.split(".")[-1].startswith("b"):
            data = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return CmgaModel(config, params)


def _values(u) -> Tensor:
    if isinstance(u, ModalityFeatures):
        return Tensor(u.values)
    return u if isinstance(u, Tensor) else Tensor(u)


def project_modality(model: CmgaModel, u: ModalityFeatures) -> Tensor:
    """``z = u W + b`` into the shared width ``d_k``."""
    if not isinstance(u, ModalityFeatures):
        raise TypeError("project_modality expects ModalityFeatures")
    m = u.modality
    try:
        W = model.params[f"proj.{m.value}.W"]
    except KeyError:
        raise MissingModalityError(f"model has no projection for {m.value}") from None
    if u.values.shape[-1] != W.shape[0]:
        raise ShapeError(
            f"{m.value} features have width {u.values.shape[-1]}, model expects {W.shape[0]}"
        )
    return add(matmul(Tensor(u.values), W), model.params[f"proj.{m.value}.b"])


def _check_same(name: str, *tensors: Tensor) -> None:
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeError(f"{name}: shape mismatch {shape} vs {t.shape}")


def cross_attention(model: CmgaModel, pair: PairSpec, z_i, z_j) -> Tensor:
    """Queries from ``z_j``, keys and values from ``z_i``.

    Values are ``z_i`` itself, with no learned projection. With cross-attention
    disabled this returns ``z_i``.
    """
    z_i, z_j = _values(z_i), _values(z_j)
    _check_same("cross_attention", z_i, z_j)
    if not model.config.use_cross_attention:
        return z_i
    key = PairSpec.parse(pair).key
    q = matmul(z_j, model.params[f"pair.{key}.W_Q"])
    k = matmul(z_i, model.params[f"pair.{key}.W_K"])
    logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(model.config.d_k))
    return matmul(softmax_rows(logits), z_i)


def forget_vector(model: CmgaModel, pair: PairSpec, a, z_j) -> Tensor:
    a, z_j = _values(a), _values(z_j)
    _check_same("forget_vector", a, z_j)
    key = PairSpec.parse(pair).key
    joined = concat_features(a, z_j)
    return sigmoid(add(matmul(joined, model.params[f"pair.{key}.W_f"]), model.params[f"pair.{key}.b_f"]))


def gated_interaction(model: CmgaModel, pair: PairSpec, z_i, a, f) -> Tensor:
    """``ReLU(z_i + (a W_m + b_m) * f)``; ``f`` is all ones when the gate is off."""
    z_i, a = _values(z_i), _values(a)
    if not model.config.use_forget_gate or f is None:
        f = Tensor(np.ones(z_i.shape))
    f = _values(f)
    _check_same("gated_interaction", z_i, a, f)
    key = PairSpec.parse(pair).key
    moved = add(matmul(a, model.params[f"pair.{key}.W_m"]), model.params[f"pair.{key}.b_m"])
    return relu(add(z_i, hadamard(moved, f)))


def pool_pair(h_seq) -> Tensor:
    return mean_rows(_values(h_seq))


def fuse(model: CmgaModel, H) -> Tensor:
    """Multi-head self-attention over stacked pair vectors, then the output head.

    ``H`` is ``(P, d_h)`` or ``(B, P, d_h)``; returns a scalar tensor or ``(B,)``.
    """
    H = _values(H)
    cfg = model.config
    n_pairs = len(cfg.pairs)
    if H.ndim not in (2, 3) or H.shape[-2:] != (n_pairs, cfg.d_h):
        raise ShapeError(f"fuse expects (..., {n_pairs}, {cfg.d_h}), got {H.shape}")
    heads = []
    for n in range(cfg.n_heads):
        q = matmul(H, model.params[f"fusion.{n}.W_q"])
        k = matmul(H, model.params[f"fusion.{n}.W_k"])
        v = matmul(H, model.params[f"fusion.{n}.W_v"])
        weights = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(cfg.d_h)))
        heads.append(matmul(weights, v))
    mixed = concat(heads, axis=-1) if len(heads) > 1 else heads[0]
    batch = H.shape[:-2]
    flat = reshape(mixed, (*batch, 1, n_pairs * cfg.d_h)) if batch else reshape(mixed, (1, n_pairs * cfg.d_h))
    y = matmul(flat, model.params["out.W_o"])
    return reshape(y, batch)


def _gather_inputs(model: CmgaModel, inputs) -> dict[Modality, ModalityFeatures]:
    if isinstance(inputs, Mapping):
        items = inputs.items()
    else:
        items = ((u.modality, u) for u in inputs)
    feats = {}
    for k, v in items:
        if v is None:
            continue
        m = Modality.parse(k)
        feats[m] = v if isinstance(v, ModalityFeatures) else ModalityFeatures(m, _values(v).data)
    return feats


def forward(model: CmgaModel, inputs) -> Tensor:
    """Predict sentiment for one utterance or a batch.

    ``inputs`` maps modality (enum, name or short code) to features shaped
    ``(L, d_m)`` or ``(B, L, d_m)``; modalities no pair references may be
    omitted. Pairs are processed in configuration order.
    """
    cfg = model.config
    feats = _gather_inputs(model, inputs)
    z = {}
    for m in cfg.used_modalities:
        if m not in feats:
            raise MissingModalityError(f"configured pairs reference {m.value}, but it was not supplied")
        z[m] = project_modality(model, feats[m])
    lead = {t.shape[:-1] for t in z.values()}
    if len(lead) != 1:
        raise ShapeError(f"modalities disagree on batch/sequence extents: {sorted(lead)}")
    if next(iter(lead))[-1] != cfg.seq_len:
        raise ShapeError(f"sequence length {next(iter(lead))[-1]} differs from configured {cfg.seq_len}")
    pooled = []
    for pair in cfg.pairs:
        z_i = z[pair.source]
        z_j = z.get(pair.query, z_i)  # query side is unread when attention and gate are off
        a = cross_attention(model, pair, z_i, z_j)
        f = forget_vector(model, pair, a, z_j) if cfg.use_forget_gate else None
        pooled.append(pool_pair(gated_interaction(model, pair, z_i, a, f)))
    H = concat(pooled, axis=-2) if len(pooled) > 1 else pooled[0]
    return fuse(model, H)


_MAGIC = b"CMGACKPT"
_VERSION = 1


def save_checkpoint(model: CmgaModel, path) -> None:
    """Write config and parameters to one file.

    Layout: 8-byte magic, little-endian u32 version, u64 header length, UTF-8
    JSON header (config plus ordered ``name``/``shape`` entries), then each
    parameter's row-major little-endian float64 values in header order.
    """
    header = {
        "config": model.config.to_dict(),
        "params": [{"name": k, "shape": list(t.shape)} for k, t in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for t in model.params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> CmgaModel:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, n = struct.unpack_from("<IQ", raw, 8)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + 12
    try:
        header = json.loads(raw[start : start + n].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        entries = [(str(e["name"]), tuple(int(d) for d in e["shape"])) for e in header["params"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc
    offset = start + n
    params = {}
    for name, shape in entries:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated data for {name}")
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return CmgaModel(config, params)


def iter_pair_groups(config: ModelConfig) -> Iterable[str]:
    """Names of the pair-specific parameters, in configuration order."""
    return [name for name in parameter_shapes(config) if name.startswith("pair.")]

"""Declarative ablation variants and the train/evaluate matrix over them.

Dropping a modality removes every pair that mentions it instead of zeroing
its features: zeroed inputs would still reach the output through the pair
parameters and the ``z_i`` residual.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, split_dataset
from .metrics import EvalResult
from .model import ConfigError, Modality, ModelConfig, PairSpec, init_parameters
from .training import DEFAULT_BATCH_SIZE, DEFAULT_LR, evaluate_model, train

__all__ = [
    "AblationVariant",
    "AblationError",
    "apply_variant",
    "run_matrix",
    "AblationResult",
    "REPORT_NOTE",
]

KINDS = ("none", "drop_modality", "no_cross_attention", "no_forget_gate", "bidirectional", "reverse_pair")

REPORT_NOTE = (
    "(-) modality removes every pair containing it (inputs are not zeroed); "
    "every variant is retrained from scratch."
)


class AblationError(RuntimeError):
    """A variant failed to train or evaluate."""


@dataclass(frozen=True)
class AblationVariant:
    kind: str = "none"
    modality: Modality | None = None
    pair: PairSpec | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown variant kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.kind == "drop_modality":
            if self.modality is None:
                raise ConfigError("drop_modality needs a modality")
            object.__setattr__(self, "modality", Modality.parse(self.modality))
        if self.kind == "reverse_pair":
            if self.pair is None:
                raise ConfigError("reverse_pair needs a pair")
            object.__setattr__(self, "pair", PairSpec.parse(self.pair))

    @classmethod
    def parse(cls, text: str) -> "AblationVariant":
        """Parse ``none``, ``drop:text``, ``no_cross_attention``, ``no_forget_gate``,
        ``bidirectional`` or ``reverse:v,a``."""
        text = text.strip()
        head, _, arg = text.partition(":")
        head = head.strip().replace("-", "_").lower()
        if head in ("drop", "drop_modality"):
            return cls("drop_modality", modality=arg)
        if head in ("reverse", "reverse_pair"):
            return cls("reverse_pair", pair=arg)
        if arg:
            raise ConfigError(f"variant {head!r} takes no argument")
        return cls(head)

    @property
    def name(self) -> str:
        if self.kind == "drop_modality":
            return f"(-) {self.modality.value}"
        if self.kind == "reverse_pair":
            return f"~{self.pair}"
        return {
            "none": "CMGA",
            "no_cross_attention": "(-) cross-attention",
            "no_forget_gate": "(-) forget gate",
            "bidirectional": "(+) bi-directional",
        }[self.kind]

    @property
    def token(self) -> str:
        if self.kind == "drop_modality":
            return f"drop:{self.modality.value}"
        if self.kind == "reverse_pair":
            return f"reverse:{self.pair.source.short},{self.pair.query.short}"
        return self.kind


def apply_variant(base: ModelConfig, v: AblationVariant) -> ModelConfig:
    """Return a new config; ``base`` is left untouched."""
    if v.kind == "none":
        return base
    if v.kind == "no_cross_attention":
        return base.replace(use_cross_attention=False)
    if v.kind == "no_forget_gate":
        return base.replace(use_forget_gate=False)
    if v.kind == "bidirectional":
        extra = [p.reversed() for p in base.pairs if p.reversed() not in base.pairs]
        return base.replace(pairs=tuple(base.pairs) + tuple(extra))
    if v.kind == "drop_modality":
        m = v.modality
        if not any(m in (p.source, p.query) for p in base.pairs):
            raise ConfigError(f"cannot drop {m.value}: no configured pair uses it")
        kept = tuple(p for p in base.pairs if m not in (p.source, p.query))
        if not kept:
            raise ConfigError(f"dropping {m.value} leaves no modality pair")
        return base.replace(pairs=kept)
    if v.kind == "reverse_pair":
        if v.pair not in base.pairs:
            raise ConfigError(f"pair {v.pair} is not in the base configuration")
        if v.pair.reversed() in base.pairs:
            raise ConfigError(f"reversing {v.pair} would duplicate an existing pair")
        return base.replace(pairs=tuple(p.reversed() if p == v.pair else p for p in base.pairs))
    raise ConfigError(f"unhandled variant {v.kind}")  # pragma: no cover


@dataclass(frozen=True)
class _Job:
    variant: AblationVariant
    seed: int
    config: ModelConfig
    train_set: Dataset
    test_set: Dataset
    epochs: int
    batch_size: int
    lr: float


def _run_job(job: _Job) -> EvalResult:
    try:
        model = init_parameters(job.config.replace(seed=job.seed))
        train(model, job.train_set, epochs=job.epochs, batch_size=job.batch_size, seed=job.seed, lr=job.lr)
        return evaluate_model(model, job.test_set)
    except Exception as exc:
        raise AblationError(f"variant {job.variant.name} (seed {job.seed}) failed: {exc}") from exc


@dataclass
class AblationResult:
    variants: list[AblationVariant]
    seeds: list[int]
    results: dict[tuple[str, int], EvalResult]

    def mean(self, variant: AblationVariant) -> dict[str, float]:
        rows = [self.results[(variant.token, s)].to_record() for s in self.seeds]
        keys = ("mae", "corr", "f_score", "acc2", "acc7")
        return {k: float(np.mean([r[k] for r in rows])) for k in keys}

    def mean_table(self) -> dict[str, dict[str, float]]:
        return {v.token: self.mean(v) for v in self.variants}

    def to_text(self) -> str:
        name_w = max(12, *(len(v.name) for v in self.variants))
        cols = ("MAE", "corr", "F-score", "Acc-2", "Acc-7")
        lines = [f"# {REPORT_NOTE}", f"# mean over seeds {', '.join(map(str, self.seeds))}"]
        lines.append("  ".join([f"{'Model':<{name_w}}"] + [f"{c:>7}" for c in cols]))
        for v in self.variants:
            m = self.mean(v)
            cells = [f"{m['mae']:.3f}", f"{m['corr']:.3f}", f"{100 * m['f_score']:.1f}",
                     f"{100 * m['acc2']:.1f}", f"{100 * m['acc7']:.1f}"]
            lines.append("  ".join([f"{v.name:<{name_w}}"] + [f"{c:>7}" for c in cells]))
        return "\n".join(lines) + "\n"

    def to_records(self) -> str:
        out = []
        for v in self.variants:
            for s in self.seeds:
                rec = {"variant": v.token, "name": v.name, "seed": s}
                rec.update(self.results[(v.token, s)].to_record())
                out.append(json.dumps(rec, sort_keys=True))
        return "\n".join(out) + "\n"


def run_matrix(
    base_config: ModelConfig,
    dataset: Dataset,
    variants: Sequence[AblationVariant],
    seeds: Sequence[int],
    epochs: int = 50,
    batch_size: int = DEFAULT_BATCH_SIZE,
    lr: float = DEFAULT_LR,
    fractions=(0.8, 0.1, 0.1),
    split_seed: int = 0,
    test_set: Dataset | None = None,
    workers: int = 1,
) -> AblationResult:
    """Train and score every (variant, seed) cell from fresh parameters.

    ``dataset`` is split once with ``split_seed`` and the test block is used for
    scoring, unless ``test_set`` is given, in which case all of ``dataset``
    is used for training.
    """
    variants, seeds = list(variants), [int(s) for s in seeds]
    if not variants or not seeds:
        raise ValueError("need at least one variant and one seed")
    if test_set is None:
        train_set, _, test_set = split_dataset(dataset, fractions, seed=split_seed)
        if test_set is None:
            raise ValueError("test split is empty")
    else:
        train_set = dataset
    jobs = []
    for v in variants:
        cfg = apply_variant(base_config, v)
        for s in seeds:
            jobs.append(_Job(v, s, cfg, train_set, test_set, epochs, batch_size, lr))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            evals = list(pool.map(_run_job, jobs))
    else:
        evals = [_run_job(j) for j in jobs]
    results = {(j.variant.token, j.seed): e for j, e in zip(jobs, evals)}
    return AblationResult(variants, seeds, results)

"""Regression and classification scores for continuous sentiment in [-3, 3].

Binary scores drop examples whose label is exactly zero and compare signs,
treating a zero prediction as positive. Another common convention keeps
zero labels and splits at ``>= 0``; it is not implemented here.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = [
    "MetricError",
    "EvalResult",
    "mae",
    "pearson_corr",
    "binary_scores",
    "acc7",
    "seven_class",
    "evaluate_all",
]


class MetricError(ValueError):
    pass


def _pair(pred, label) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    y = np.asarray(label, dtype=np.float64).reshape(-1)
    if p.size == 0 or y.size == 0:
        raise MetricError("empty input")
    if p.size != y.size:
        raise MetricError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    return p, y


def mae(pred, label) -> float:
    p, y = _pair(pred, label)
    return float(np.mean(np.abs(p - y)))


def pearson_corr(pred, label) -> float:
    p, y = _pair(pred, label)
    if p.size < 2:
        raise MetricError("correlation needs at least two examples")
    dp, dy = p - p.mean(), y - y.mean()
    sp, sy = np.sqrt(np.dot(dp, dp)), np.sqrt(np.dot(dy, dy))
    if sp == 0 or sy == 0:
        raise MetricError("correlation is undefined for a constant vector")
    return float(np.clip(np.dot(dp, dy) / (sp * sy), -1.0, 1.0))


def binary_scores(pred, label) -> tuple[float, float, int]:
    """Return ``(acc2, weighted_f1, n_used)`` over non-zero labels."""
    p, y = _pair(pred, label)
    keep = y != 0
    if not keep.any():
        raise MetricError("all labels are zero; binary scores are undefined")
    truth = y[keep] > 0
    guess = p[keep] >= 0
    n = truth.size
    acc = float(np.mean(truth == guess))
    f = 0.0
    for cls in (False, True):
        tp = np.sum((guess == cls) & (truth == cls))
        fp = np.sum((guess == cls) & (truth != cls))
        fn = np.sum((guess != cls) & (truth == cls))
        support = tp + fn
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        f += f1 * support / n
    return acc, float(f), int(n)


def seven_class(x) -> np.ndarray:
    """Round half away from zero, then clamp to the integer classes -3..3."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.sign(x) * np.floor(np.abs(x) + 0.5), -3, 3)


def acc7(pred, label) -> float:
    p, y = _pair(pred, label)
    return float(np.mean(seven_class(p) == seven_class(y)))


@dataclass(frozen=True)
class EvalResult:
    mae: float
    corr: float
    f_score: float
    acc2: float
    acc7: float
    n_total: int
    n_binary: int

    HEADER = ("MAE", "corr", "F-score", "Acc-2", "Acc-7")

    def to_record(self) -> dict:
        return asdict(self)

    def cells(self) -> list[str]:
        return [
            f"{self.mae:.3f}",
            f"{self.corr:.3f}",
            f"{100 * self.f_score:.1f}",
            f"{100 * self.acc2:.1f}",
            f"{100 * self.acc7:.1f}",
        ]

    def format_row(self, name: str = "CMGA") -> str:
        return "  ".join([f"{name:<12}"] + [f"{c:>7}" for c in self.cells()])

    @classmethod
    def header_row(cls) -> str:
        return "  ".join([f"{'Model':<12}"] + [f"{h:>7}" for h in cls.HEADER])


def evaluate_all(pred, label) -> EvalResult:
    p, y = _pair(pred, label)
    acc2, f, n_bin = binary_scores(p, y)
    return EvalResult(
        mae=mae(p, y),
        corr=pearson_corr(p, y),
        f_score=f,
        acc2=acc2,
        acc7=acc7(p, y),
        n_total=int(p.size),
        n_binary=n_bin,
    )

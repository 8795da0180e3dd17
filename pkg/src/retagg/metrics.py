"""Series-level evaluation: F1, AUC, accuracy.

AUC uses the rank formulation (probability that a random positive
outscores a random negative, ties counted half) rather than trapezoidal
ROC integration; the two are identical and the rank form has a trivial
exact oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class EvalResult:
    f1: float
    auc: float
    accuracy: float
    n_series: int
    threshold: float

    def to_dict(self) -> dict:
        return {
            "f1": self.f1,
            "auc": self.auc,
            "accuracy": self.accuracy,
            "n_series": self.n_series,
            "threshold": self.threshold,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _as_arrays(predictions: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(predictions, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.int64)
    if preds.shape != labs.shape or preds.ndim != 1 or preds.size < 1:
        raise ValueError(f"predictions and labels must be equal-length 1-D, got {preds.shape} vs {labs.shape}")
    return preds, labs


def f1_score(predictions: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    """F1 on the positive class at the given decision threshold.

    Defined as 0 when precision + recall is 0 (no true positives).
    """
    preds, labs = _as_arrays(predictions, labels)
    decided = preds >= threshold
    tp = int(np.sum(decided & (labs == 1)))
    fp = int(np.sum(decided & (labs == 0)))
    fn = int(np.sum(~decided & (labs == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def auc_score(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outscores a random negative, ties counting 1/2."""
    preds, labs = _as_arrays(scores, labels)
    pos = preds[labs == 1]
    neg = preds[labs == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC undefined: both classes must be present")
    wins = np.sum(pos[:, None] > neg[None, :])
    ties = np.sum(pos[:, None] == neg[None, :])
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


def accuracy(predictions: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    """Fraction of series whose thresholded prediction equals the label."""
    preds, labs = _as_arrays(predictions, labels)
    decided = (preds >= threshold).astype(np.int64)
    return float(np.mean(decided == labs))


def evaluate(predictions: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> EvalResult:
    """All three series-level metrics in one record."""
    preds, labs = _as_arrays(predictions, labels)
    return EvalResult(
        f1=f1_score(preds, labs, threshold),
        auc=auc_score(preds, labs),
        accuracy=accuracy(preds, labs, threshold),
        n_series=int(preds.size),
        threshold=threshold,
    )

"""Confusion matrices, accuracy, and macro precision.

Convention throughout: confusion rows are the actual class, columns the
predicted class. Macro precision averages diag(k) / column_sum(k) over
classes; a class that was never predicted contributes precision 0 and is
flagged in the report rather than raising. Micro precision (identical to
accuracy for single-label problems) is exported alongside so either
averaging can be compared.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .models import ArrayDataset, Model


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K actual-by-predicted count matrix."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("confusion matrix entries must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def n_samples(self) -> int:
        return int(self.counts.sum())


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float
    precision_macro: float
    precision_micro: float
    per_class_precision: np.ndarray
    never_predicted: list[int]
    n_samples: int
    scenario: str | None = None
    seed: int | None = None
    model_kind: str | None = None

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.counts.tolist(),
            "accuracy": self.accuracy,
            "precision_macro": self.precision_macro,
            "precision_micro": self.precision_micro,
            "per_class_precision": [float(v) for v in self.per_class_precision],
            "never_predicted": list(self.never_predicted),
            "n_samples": self.n_samples,
            "scenario": self.scenario,
            "seed": self.seed,
            "model_kind": self.model_kind,
        }


def confusion(predictions, labels, k: int) -> ConfusionMatrix:
    """Count (actual, predicted) pairs into a K x K matrix."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValueError(
            f"predictions {predictions.shape} and labels {labels.shape} must be equal-length vectors"
        )
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    for name, v in (("predictions", predictions), ("labels", labels)):
        if v.size and (np.any(v < 0) or np.any(v >= k)):
            raise ValueError(f"{name} contain ids outside [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(counts)


def accuracy(cm: ConfusionMatrix) -> float:
    """trace / total; exact by construction."""
    if cm.n_samples == 0:
        raise ValueError("accuracy undefined for an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.n_samples


def precision_per_class(cm: ConfusionMatrix) -> tuple[np.ndarray, list[int]]:
    """diag(k) / column_sum(k) per class; never-predicted classes get 0."""
    col_sums = cm.counts.sum(axis=0)
    never = [int(i) for i in np.flatnonzero(col_sums == 0)]
    safe = np.where(col_sums == 0, 1, col_sums)
    per_class = np.where(col_sums == 0, 0.0, np.diag(cm.counts) / safe)
    return per_class.astype(np.float64), never


def precision_macro(cm: ConfusionMatrix) -> float:
    """Mean per-class precision."""
    if cm.k < 2:
        raise ValueError(f"precision needs >= 2 classes, got {cm.k}")
    if cm.n_samples == 0:
        raise ValueError("precision undefined for an all-zero confusion matrix")
    per_class, _ = precision_per_class(cm)
    return float(per_class.mean())


def report_from_predictions(
    predictions,
    labels,
    k: int,
    scenario: str | None = None,
    seed: int | None = None,
    model_kind: str | None = None,
) -> EvalReport:
    cm = confusion(predictions, labels, k)
    per_class, never = precision_per_class(cm)
    acc = accuracy(cm)
    return EvalReport(
        confusion=cm,
        accuracy=acc,
        precision_macro=precision_macro(cm),
        precision_micro=acc,
        per_class_precision=per_class,
        never_predicted=never,
        n_samples=cm.n_samples,
        scenario=scenario,
        seed=seed,
        model_kind=model_kind,
    )


def predict_and_report(
    model: Model,
    test_set: ArrayDataset,
    k: int,
    scenario: str | None = None,
    seed: int | None = None,
    batch_size: int = 256,
) -> EvalReport:
    """Eval-mode argmax predictions aggregated into a report.

    Argmax ties break toward the lowest class id. Deterministic: the same
    model and data always produce the same report.
    """
    n = len(test_set)
    if n == 0:
        raise ValueError("cannot evaluate an empty test set")
    preds = np.empty(n, dtype=np.int64)
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        tex = test_set.textures[sl] if model.kind == "fusionnet" else None
        probs = model.forward(test_set.images[sl], tex, train=False)
        preds[sl] = probs.argmax(axis=1)
    return report_from_predictions(
        preds, test_set.labels, k, scenario=scenario, seed=seed, model_kind=model.kind
    )


# -- serialization ---------------------------------------------------------------


def write_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    """CSV with an ``actual`` id column and one ``pred_k`` column per class."""
    lines = ["actual," + ",".join(f"pred_{j}" for j in range(cm.k))]
    for i in range(cm.k):
        lines.append(f"{i}," + ",".join(str(int(v)) for v in cm.counts[i]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

"""Element-level F1 and intersection-over-union.

Both metrics work on the pooled confusion counts of every element of every
sample, so they are invariant to sample and element order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Dataset

AVERAGING = ("macro", "weighted")


def _flat_labels(data) -> np.ndarray:
    if isinstance(data, Dataset):
        data = [s.labels for s in data.samples]
    arrays = [np.asarray(lab, dtype=np.int64).ravel() for lab in data]
    return np.concatenate(arrays) if arrays else np.zeros(0, dtype=np.int64)


def _shapes(data) -> list:
    if isinstance(data, Dataset):
        data = [s.labels for s in data.samples]
    return [np.shape(lab) for lab in data]


def confusion(pred, truth, k: int) -> np.ndarray:
    """K x K counts, rows = true label, columns = predicted label."""
    if _shapes(pred) != _shapes(truth):
        raise ValueError("prediction and truth shapes differ")
    p, t = _flat_labels(pred), _flat_labels(truth)
    return np.bincount(t * k + p, minlength=k * k).reshape(k, k)


def _n_labels(pred, truth, k: int | None) -> int:
    for d in (pred, truth):
        if isinstance(d, Dataset):
            return len(d.tagset)
    if k is None:
        raise ValueError("pass k when scoring raw label arrays")
    return k


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2 * tp / denom, np.nan)


def per_class_iou(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / union, np.nan)


def _average(scores: np.ndarray, support: np.ndarray, classes: Sequence[int], averaging: str) -> float:
    if averaging not in AVERAGING:
        raise ValueError(f"averaging must be one of {AVERAGING}")
    present = [c for c in classes if not np.isnan(scores[c])]
    if not present:
        return 1.0
    vals = scores[present]
    if averaging == "macro":
        return float(vals.mean())
    weights = support[present].astype(np.float64)
    if weights.sum() == 0:
        # only spurious predictions of classes absent from the truth
        return 0.0
    return float((vals * weights).sum() / weights.sum())


def f1_score(pred, truth, averaging: str = "weighted", include_background: bool = False,
             background: int | None = None, k: int | None = None) -> float:
    """Token-level F1 averaged over classes seen in either prediction or truth.

    Background is excluded unless ``include_background``; ``weighted`` uses
    true-label support as weights.  Returns 1.0 when no class is present.
    """
    k = _n_labels(pred, truth, k)
    if background is None:
        ds = pred if isinstance(pred, Dataset) else truth
        background = ds.tagset.background_index if isinstance(ds, Dataset) else 0
    cm = confusion(pred, truth, k)
    classes = [c for c in range(k) if include_background or c != background]
    return _average(per_class_f1(cm), cm.sum(axis=1), classes, averaging)


def iou_score(pred, truth, averaging: str = "weighted", k: int | None = None) -> float:
    """Pixel IoU averaged over every class present in prediction or truth (background included)."""
    k = _n_labels(pred, truth, k)
    cm = confusion(pred, truth, k)
    return _average(per_class_iou(cm), cm.sum(axis=1), range(k), averaging)


def class_f1(pred, truth, label: int, k: int | None = None) -> float:
    k = _n_labels(pred, truth, k)
    score = per_class_f1(confusion(pred, truth, k))[label]
    return 1.0 if np.isnan(score) else float(score)


def score_pair(pred: Dataset, truth: Dataset) -> dict[str, float]:
    """Both averaging modes of the metric family that fits the dataset kind."""
    if truth.kind == "grid":
        return {"weighted_iou": iou_score(pred, truth, "weighted"),
                "macro_iou": iou_score(pred, truth, "macro")}
    return {"weighted_f1": f1_score(pred, truth, "weighted"),
            "macro_f1": f1_score(pred, truth, "macro")}


CSV_HEADER = ("dataset", "strategy", "metric", "score", "seed", "runtime_s")


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    strategy: str
    metric: str
    score: float
    seed: int
    runtime_s: float | None = None

    def as_csv(self, with_runtime: bool = False) -> list[str]:
        rt = "" if not with_runtime or self.runtime_s is None else f"{self.runtime_s:.3f}"
        return [self.dataset, self.strategy, self.metric, f"{self.score:.6f}", str(self.seed), rt]

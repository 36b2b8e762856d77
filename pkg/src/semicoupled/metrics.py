"""Forecast and regression evaluation metrics.

The regression accuracy follows a ratio-with-floor form: a prediction is
accurate when ``lam / (|pred - label| + eps)`` reaches 1, i.e. when the
absolute error (plus eps) is at most ``lam``.  Field skill scores (CSI, FAR,
POD) and the correlation are computed on fields binarised at a threshold;
zero denominators score 0 by convention.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, DimensionError, ParameterError


@dataclass
class MetricsConfig:
    """Tolerance lam, tie-break eps, and the binarisation threshold."""

    lam: float = 1.0
    eps: float = 1e-6
    binarize_threshold: float = 0.5

    def __post_init__(self):
        if self.lam <= 0:
            raise ParameterError(f"lam must be positive, got {self.lam}")
        if self.eps <= 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")


@dataclass
class SkillCounts:
    """Joint event counts of binarised prediction/label fields."""

    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int


def regression_accuracy(preds: np.ndarray, labels: np.ndarray, cfg: MetricsConfig) -> float:
    """Fraction of predictions with floor(min(lam / (|diff| + eps), 1)) == 1.

    Implemented literally as the mean of the floored ratio, which equals the
    fraction of samples with ``|pred - label| + eps <= lam``.
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise DimensionError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    if preds.size == 0:
        raise DimensionError("regression_accuracy needs at least one sample")
    ratio = cfg.lam / (np.abs(preds - labels) + cfg.eps)
    return float(np.floor(np.minimum(ratio, 1.0)).mean())


def regression_accuracy_threshold(preds: np.ndarray, labels: np.ndarray, cfg: MetricsConfig) -> float:
    """Equivalent threshold form: fraction with |pred - label| + eps <= lam."""
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float((np.abs(preds - labels) + cfg.eps <= cfg.lam).mean())


def binarize(field: np.ndarray, threshold: float) -> np.ndarray:
    return (np.asarray(field, dtype=np.float64) >= threshold).astype(np.float64)


def count_events(pred: np.ndarray, label: np.ndarray, cfg: MetricsConfig) -> SkillCounts:
    """Binarise both fields and count hits/misses/false alarms."""
    pred = np.asarray(pred)
    label = np.asarray(label)
    if pred.shape != label.shape:
        raise DimensionError(f"pred shape {pred.shape} != label shape {label.shape}")
    p = binarize(pred, cfg.binarize_threshold).astype(bool)
    l = binarize(label, cfg.binarize_threshold).astype(bool)
    return SkillCounts(
        hits=int(np.sum(p & l)),
        misses=int(np.sum(~p & l)),
        false_alarms=int(np.sum(p & ~l)),
        correct_negatives=int(np.sum(~p & ~l)),
    )


def skill_scores(pred: np.ndarray, label: np.ndarray, cfg: MetricsConfig) -> dict[str, float]:
    """CSI, FAR and POD of the binarised fields; 0/0 scores 0."""
    c = count_events(pred, label, cfg)
    csi_den = c.hits + c.misses + c.false_alarms
    far_den = c.hits + c.false_alarms
    pod_den = c.hits + c.misses
    return {
        "csi": c.hits / csi_den if csi_den else 0.0,
        "far": c.false_alarms / far_den if far_den else 0.0,
        "pod": c.hits / pod_den if pod_den else 0.0,
    }


def correlation(
    pred: np.ndarray,
    label: np.ndarray,
    cfg: MetricsConfig | None = None,
    eps: float = 1e-9,
    binarized: bool = True,
) -> float:
    """sum(P * L) / sqrt(sum(P^2) * sum(L^2) + eps) over the two fields.

    By default both fields pass through the binarisation threshold first;
    set ``binarized`` False to correlate the raw intensities.
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise DimensionError(f"pred shape {pred.shape} != label shape {label.shape}")
    if binarized:
        thr = (cfg or MetricsConfig()).binarize_threshold
        pred = binarize(pred, thr)
        label = binarize(label, thr)
    num = float(np.sum(pred * label))
    den = float(np.sqrt(np.sum(pred * pred) * np.sum(label * label) + eps))
    return num / den


def normalize_intensity(field: np.ndarray) -> np.ndarray:
    """Affine rescale of a field onto [0, 1]; constant fields are degenerate.

    Idempotent: a field already spanning [0, 1] comes back unchanged.
    """
    field = np.asarray(field, dtype=np.float64)
    mn = field.min()
    mx = field.max()
    if mx - mn <= 0:
        raise DegenerateInputError("cannot normalise a constant field")
    return (field - mn) / (mx - mn)


def write_metrics_csv(path, values: dict[str, float]) -> None:
    """Serialise one evaluation as a flat CSV row (name header + value row)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(values.keys()))
        writer.writerow([repr(float(v)) for v in values.values()])

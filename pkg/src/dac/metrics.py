"""Evaluation of abstaining classifiers.

Absent values (a precision with no predicted positives, a risk at zero
coverage) are ``None`` and serialize as JSON ``null``, never as 0.
"""

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError
from .loss import softmax
from .nn import forward

ACCURACY_MODES = ("overall", "non_abstained_only", "renormalized")


def predict_proba(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return np.zeros((0, model.n_outputs))
    return softmax(forward(model, x))


def has_abstention(model, k):
    return model.n_outputs == k + 1


def abstains(model, ds):
    """Boolean mask: argmax over all k+1 outputs is the abstention class."""
    if not has_abstention(model, ds.k):
        return np.zeros(ds.n, bool)
    if ds.n == 0:
        return np.zeros(0, bool)
    return np.argmax(forward(model, ds.features), axis=1) == ds.k


def renormalized_probs(probs, k):
    """(n, k) real-class probabilities with abstention mass divided out."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[1] == k:
        return probs
    real = probs[:, :k]
    return real / real.sum(axis=1, keepdims=True)


def abstention_rate(model, ds) -> float:
    if ds.n == 0:
        return 0.0
    return float(abstains(model, ds).mean())


@dataclass
class AbstentionPR:
    precision: Optional[float]
    recall: Optional[float]
    tp: int
    fp: int
    fn: int


def abstention_pr_from_masks(abstained, positive) -> AbstentionPR:
    abstained = np.asarray(abstained, bool)
    positive = np.asarray(positive, bool)
    tp = int(np.sum(abstained & positive))
    fp = int(np.sum(abstained & ~positive))
    fn = int(np.sum(~abstained & positive))
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return AbstentionPR(precision, recall, tp, fp, fn)


def abstention_pr(model, ds, positive=None) -> AbstentionPR:
    """Abstention as a detector of structurally corrupted samples.

    ``positive`` defaults to the dataset's ``structured`` flags.
    """
    pos = ds.structured if positive is None else positive
    return abstention_pr_from_masks(abstains(model, ds), pos)


@dataclass
class RiskCoveragePoint:
    threshold: float
    coverage: float
    risk: Optional[float]


def default_thresholds():
    return np.linspace(0.0, 1.0, 101)


def risk_coverage(probs, labels, thresholds=None):
    """Softmax-threshold selective prediction over (n, k) normalized probabilities."""
    if thresholds is None:
        thresholds = default_thresholds()
    thresholds = np.asarray(thresholds, dtype=np.float64).ravel()
    if thresholds.size == 0:
        raise InvalidInputError("need at least one threshold")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n = labels.shape[0]
    if probs.shape[0] != n:
        raise InvalidInputError("probabilities and labels are not aligned")
    conf = probs.max(axis=1) if n else np.zeros(0)
    wrong = probs.argmax(axis=1) != labels if n else np.zeros(0, bool)
    points = []
    for t in thresholds:
        covered = conf >= t
        m = int(covered.sum())
        risk = float(wrong[covered].mean()) if m else None
        points.append(RiskCoveragePoint(float(t), m / n if n else 0.0, risk))
    return points


def residual_noise(retained_labels, retained_original_labels) -> Optional[float]:
    a = np.asarray(retained_labels)
    b = np.asarray(retained_original_labels)
    if a.shape != b.shape:
        raise InvalidInputError("label sequences are not aligned")
    if a.size == 0:
        return None
    return float(np.mean(a != b))


def accuracy(model, ds, mode="overall", labels=None) -> Optional[float]:
    """Accuracy against ``labels`` (default: the dataset's current labels).

    overall: argmax over every output; an abstention counts as wrong.
    non_abstained_only: the same, with abstained samples dropped from the denominator.
    renormalized: argmax of the k real-class probabilities, all samples counted.
    """
    if mode not in ACCURACY_MODES:
        raise InvalidInputError(f"unknown accuracy mode {mode!r}")
    y = ds.labels if labels is None else np.asarray(labels)
    if ds.n == 0:
        return None
    logits = forward(model, ds.features)
    if mode == "renormalized":
        return float(np.mean(np.argmax(logits[:, : ds.k], axis=1) == y))
    pred = np.argmax(logits, axis=1)
    correct = pred == y
    if mode == "overall":
        return float(correct.mean())
    kept = pred != ds.k
    if not kept.any():
        return None
    return float(correct[kept].mean())


def write_curve_csv(path, points):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["threshold", "coverage", "risk"])
        for p in points:
            w.writerow([repr(p.threshold), repr(p.coverage), "null" if p.risk is None else repr(p.risk)])


def to_jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {k: to_jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(to_jsonable(obj), f, indent=2, sort_keys=True)
        f.write("\n")

"""Scalar losses and their logit gradients.

Three losses drive training:

* ``cross_entropy`` — mean negative log softmax probability of the true class.
* ``focal_loss`` — per-sample cross-entropy c reweighted to
  eta * (1 - e^{-c})^lambda * c, then averaged.  Since e^{-c} is exactly the
  softmax probability of the true class, the weight grows with sample
  difficulty.
* ``at_loss`` — the accuracy-attention meta loss over a task batch:
  sum_i -(focal_i)^phi * log2(accuracy_i).  Tasks the adapted model answers
  poorly (low accuracy, high focal loss) dominate the meta gradient.

Accuracy enters ``at_loss`` as a stop-gradient constant (argmax is not
differentiable); only the focal losses carry gradient, so the meta gradient
is sum_i task_weights[i] * grad_i with the returned per-task weights.
"""

from dataclasses import dataclass

import numpy as np

from .numcore.params import ParamSet


@dataclass(frozen=True)
class FocalParams:
    """Balance factor eta >= 0 and focusing parameter lam >= 0."""

    eta: float = 5.0
    lam: float = 2.0

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("focal balance factor eta must be >= 0")
        if self.lam < 0:
            raise ValueError("focal focusing parameter lam must be >= 0")


@dataclass(frozen=True)
class TaskOutcome:
    """Query-set scores of one adapted task model."""

    focal_loss: float
    accuracy: float
    grad: ParamSet

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.focal_loss < 0.0:
            raise ValueError(f"focal loss {self.focal_loss} negative")


def _check_labels(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError("logits must be (rows, classes) with one label per row")
    if (labels < 0).any() or (labels >= logits.shape[1]).any():
        raise ValueError("label out of range for logit width")
    return logits, labels


def _softmax_ce(logits, labels):
    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    Z = ez.sum(axis=1, keepdims=True)
    S = ez / Z
    lse = np.log(Z[:, 0]) + zmax[:, 0]
    c = lse - logits[np.arange(logits.shape[0]), labels]
    return S, c


def cross_entropy(logits, labels):
    """Mean CE and its logit gradient (softmax - onehot) / rows."""
    logits, labels = _check_labels(logits, labels)
    n = logits.shape[0]
    S, c = _softmax_ce(logits, labels)
    grad = S.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(c.mean()), grad


def per_sample_focal(c, fp: FocalParams):
    """Per-sample focal loss and d(focal)/d(ce) from per-sample CE values."""
    c = np.asarray(c, dtype=np.float64)
    if fp.lam == 0.0:
        return fp.eta * c, np.full_like(c, fp.eta)
    p = np.exp(-c)
    u = -np.expm1(-c)
    ul = np.where(u > 0.0, u ** fp.lam, 0.0)
    ulm1 = np.where(u > 0.0, u ** (fp.lam - 1.0), 0.0)
    loss = fp.eta * ul * c
    dldc = fp.eta * (ul + fp.lam * c * ulm1 * p)
    return loss, dldc


def focal_loss(logits, labels, fp: FocalParams):
    """Mean focal loss and its exact logit gradient."""
    logits, labels = _check_labels(logits, labels)
    n = logits.shape[0]
    S, c = _softmax_ce(logits, labels)
    loss, dldc = per_sample_focal(c, fp)
    grad = S.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= (dldc / n)[:, None]
    return float(loss.mean()), grad


def accuracy(logits, labels):
    """Fraction of rows whose argmax logit is the label; ties pick the lowest class."""
    logits, labels = _check_labels(logits, labels)
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def at_loss(tasks, phi, acc_floor):
    """Accuracy-attention meta loss over a task batch.

    Returns (loss, task_weights) where task_weights[i] is the coefficient of
    task i's gradient in the meta gradient:
    -phi * focal_i^(phi-1) * log2(clamped accuracy_i).

    acc_floor clamps zero accuracies away from the log singularity; callers
    use half of one query sample, 1 / (2 * query size).
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("at_loss needs a non-empty task list")
    if phi < 0:
        raise ValueError("attention scale phi must be >= 0")
    total = 0.0
    weights = []
    for t in tasks:
        acc = min(max(t.accuracy, acc_floor), 1.0)
        log_acc = np.log2(acc)
        total += -(t.focal_loss ** phi) * log_acc
        if phi == 0.0:
            w = 0.0
        elif t.focal_loss == 0.0 and phi < 1.0:
            w = 0.0  # limit of phi * F^(phi-1) direction at F = 0 is unusable; no gradient
        else:
            w = -phi * (t.focal_loss ** (phi - 1.0)) * log_acc
        weights.append(float(w))
    return float(total), weights

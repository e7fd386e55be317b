"""Abstaining cross-entropy loss and its closed-form gradients.

Conventions: a model for ``k`` real classes emits ``k + 1`` outputs; index
``k`` (the last one) is the abstention class. Class indices are 0-based, so a
valid target lies in ``0..k-1``.

With ``p = softmax(a)``, ``s = p[k]`` (abstention mass), ``r = 1 - s`` and the
normalized cross-entropy ``c = -log(p[j] / r)``, the per-sample loss is::

    L = r * c + alpha * log(1 / r)

and its gradient with respect to the pre-activations is::

    dL/da[j]   = -(r - p[j]) + s * p[j] * c - alpha * s * p[j] / r
    dL/da[m]   = p[m] * (1 + s * c - alpha * s / r)        (m real, m != j)
    dL/da[k]   = s * (alpha - r * c)

The three pieces sum to zero, as they must for any function of softmax
outputs.

The scalar functions take probability vectors (validated); the ``*_batch``
functions work directly on logits via log-sum-exp, which keeps training free of
``log(0)`` even when the network saturates.
"""

import math

import numpy as np

from .errors import AbstentionSaturationError, InvalidInputError, InvalidTargetError

EPS_ABST = 1e-12
PROB_SUM_TOL = 1e-9


def softmax(logits):
    """Row-wise softmax with max subtraction. Accepts a vector or an (n, m) matrix."""
    a = np.asarray(logits, dtype=np.float64)
    if a.ndim not in (1, 2) or a.shape[-1] == 0:
        raise InvalidInputError(f"logits must be a non-empty vector or matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("logits must be finite")
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    a = np.asarray(logits, dtype=np.float64)
    m = a.max(axis=-1, keepdims=True)
    return a - (m + np.log(np.exp(a - m).sum(axis=-1, keepdims=True)))


def _check_probs(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 3:
        raise InvalidInputError(f"probability vector needs k+1 >= 3 entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InvalidInputError("probabilities must lie in [0, 1]")
    if abs(p.sum() - 1.0) > PROB_SUM_TOL:
        raise InvalidInputError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def _check_target(true_class, k):
    j = int(true_class)
    if j == k:
        raise InvalidTargetError("the abstention class cannot be a target")
    if not 0 <= j < k:
        raise InvalidTargetError(f"target {true_class} outside 0..{k - 1}")
    return j


def _check_alpha(alpha):
    alpha = float(alpha)
    if not alpha >= 0.0:
        raise InvalidInputError(f"alpha must be >= 0, got {alpha}")
    return alpha


def _check_saturation(s):
    if s >= 1.0 - EPS_ABST:
        raise AbstentionSaturationError(f"abstention probability {s!r} is saturated")


def _xlog_ratio(x, y):
    """x * log(y / x), taking the x -> 0 limit as 0."""
    if x == 0.0:
        return 0.0
    return x * math.log(y / x)


def normalized_true_probs(p):
    """Real-class probabilities with the abstention mass renormalized out."""
    p = _check_probs(p)
    s = p[-1]
    if s >= 1.0:
        raise AbstentionSaturationError("abstention probability is 1; nothing to renormalize")
    return p[:-1] / (1.0 - s)


def dac_loss(p, true_class, alpha):
    p = _check_probs(p)
    k = p.size - 1
    j = _check_target(true_class, k)
    alpha = _check_alpha(alpha)
    s = p[k]
    _check_saturation(s)
    r = 1.0 - s
    # -log(p_j / r) = log(r) - log(p_j); p_j = 0 gives +inf, which is the honest value
    ce = math.log(r) - math.log(p[j]) if p[j] > 0.0 else math.inf
    return r * ce - alpha * math.log(r)


def true_class_grad(p, true_class, alpha):
    """dL/da_j for the true class j, evaluated from probabilities."""
    p = _check_probs(p)
    k = p.size - 1
    j = _check_target(true_class, k)
    alpha = _check_alpha(alpha)
    s = p[k]
    _check_saturation(s)
    r = 1.0 - s
    pj = p[j]
    return -(r - pj) + s * _xlog_ratio(pj, r) - alpha * s * pj / r


def abstention_grad(p, true_class, alpha):
    """dL/da_abstain = s * [ r * (log(1/r) - g) + alpha ], g the (k+1)-way cross-entropy."""
    p = _check_probs(p)
    k = p.size - 1
    j = _check_target(true_class, k)
    alpha = _check_alpha(alpha)
    s = p[k]
    _check_saturation(s)
    r = 1.0 - s
    if p[j] == 0.0:
        return -math.inf if s > 0.0 else 0.0
    g = -math.log(p[j])
    return s * (r * (-math.log(r) - g) + alpha)


def alpha_threshold(p, true_class):
    """Largest alpha for which gradient descent still grows the abstention logit."""
    p = _check_probs(p)
    k = p.size - 1
    j = _check_target(true_class, k)
    s = p[k]
    _check_saturation(s)
    if p[j] == 0.0:
        return math.inf
    r = 1.0 - s
    return max(r * (math.log(r) - math.log(p[j])), 0.0)


def dac_loss_grad(logits, true_class, alpha):
    """Gradient of the loss with respect to all k+1 pre-activations."""
    a = np.asarray(logits, dtype=np.float64)
    if a.ndim != 1 or a.size < 3:
        raise InvalidInputError(f"logit vector needs k+1 >= 3 entries, got shape {a.shape}")
    p = softmax(a)
    k = a.size - 1
    j = _check_target(true_class, k)
    alpha = _check_alpha(alpha)
    s = p[k]
    _check_saturation(s)
    r = 1.0 - s
    # c = log(r) - log(p_j), with log(r) from the real-class log-sum-exp
    real = a[:k]
    m = real.max()
    c = m + math.log(np.exp(real - m).sum()) - a[j]
    g = p * (1.0 + s * c - alpha * s / r)
    g[j] = -(r - p[j]) + s * p[j] * c - alpha * s * p[j] / r
    g[k] = s * (alpha - r * c)
    return g


def _batch_parts(logits):
    a = np.asarray(logits, dtype=np.float64)
    k = a.shape[1] - 1
    m_all = a.max(axis=1)
    lse_all = m_all + np.log(np.exp(a - m_all[:, None]).sum(axis=1))
    real = a[:, :k]
    m_real = real.max(axis=1)
    lse_real = m_real + np.log(np.exp(real - m_real[:, None]).sum(axis=1))
    p = np.exp(a - lse_all[:, None])
    r = np.exp(lse_real - lse_all)
    return a, k, p, r, lse_all, lse_real


def dac_loss_batch(logits, labels, alpha):
    """Mean loss over a batch and its gradient w.r.t. the (n, k+1) logits.

    The gradient is already divided by n (batch loss is the sample mean).
    ``alpha = inf`` masks the abstention unit out entirely, leaving plain
    k-class cross-entropy on the real logits.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n == 0:
        raise InvalidInputError("empty batch")
    if math.isinf(alpha):
        loss, grad = cross_entropy_batch(np.asarray(logits)[:, :-1], labels)
        full = np.zeros_like(np.asarray(logits, dtype=np.float64))
        full[:, :-1] = grad
        return loss, full
    a, k, p, r, lse_all, lse_real = _batch_parts(logits)
    if np.any(labels < 0) or np.any(labels >= k):
        raise InvalidTargetError("batch targets must lie in 0..k-1")
    if np.any(r <= EPS_ABST):
        raise AbstentionSaturationError("abstention probability saturated within batch")
    s = p[:, k]
    rows = np.arange(n)
    c = lse_real - a[rows, labels]
    losses = r * c + alpha * (lse_all - lse_real)
    g = p * (1.0 + s * c - alpha * s / r)[:, None]
    pj = p[rows, labels]
    g[rows, labels] = -(r - pj) + s * pj * c - alpha * s * pj / r
    g[:, k] = s * (alpha - r * c)
    return float(losses.mean()), g / n


def cross_entropy_batch(logits, labels):
    """Plain softmax cross-entropy (mean) and its gradient over every column of ``logits``."""
    a = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n == 0:
        raise InvalidInputError("empty batch")
    lp = log_softmax(a)
    rows = np.arange(n)
    loss = -lp[rows, labels].mean()
    g = np.exp(lp)
    g[rows, labels] -= 1.0
    return float(loss), g / n


def abstention_stats_batch(logits, labels):
    """Batch means of p_abstain and of the normalized true-class cross-entropy.

    These are the two quantities the alpha auto-tuner consumes during warm-up.
    """
    a, k, p, r, lse_all, lse_real = _batch_parts(logits)
    rows = np.arange(a.shape[0])
    c = lse_real - a[rows, np.asarray(labels)]
    return float(p[:, k].mean()), float(c.mean())

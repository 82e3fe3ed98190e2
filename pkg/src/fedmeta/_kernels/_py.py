"""Pure-numpy kernel backend.

Reference implementation of the three hot operations (forward, backward,
adapt_eval).  The compiled backend in ``_fast.pyx`` mirrors this arithmetic;
parity tests compare the two on random instances.
"""

import numpy as np

from ..errors import NumericsError
from .plan import BN_EPS, ForwardCache, affine_offsets, enc_out_dim

NAME = "python"


def _weight(values, offs, plan, i):
    ow, _ = offs[i]
    fi, fo = int(plan.layer_in[i]), int(plan.layer_out[i])
    return values[ow:ow + fi * fo].reshape(fi, fo)


def _bias(values, offs, plan, i):
    _, ob = offs[i]
    fo = int(plan.layer_out[i])
    return values[ob:ob + fo]


def _batchnorm(X):
    mu = X.mean(axis=0)
    var = ((X - mu) ** 2).mean(axis=0)
    return (X - mu) / np.sqrt(var + BN_EPS)


def forward(plan, values, X):
    """Two-branch forward pass; returns (logits, cache)."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    X = np.ascontiguousarray(X, dtype=np.float64)
    offs = affine_offsets(plan)
    n_aff = len(offs)
    aff_inputs, aff_acts = [], []

    h = X
    for i in range(plan.n_enc):
        aff_inputs.append(h)
        h = np.tanh(h @ _weight(values, offs, plan, i) + _bias(values, offs, plan, i))
        aff_acts.append(h)
    bn = _batchnorm(X) if plan.bn_dim else None
    if plan.bn_dim:
        h = np.concatenate([h, bn], axis=1)
    for i in range(plan.n_enc, n_aff - 1):
        aff_inputs.append(h)
        h = np.tanh(h @ _weight(values, offs, plan, i) + _bias(values, offs, plan, i))
        aff_acts.append(h)
    aff_inputs.append(h)
    logits = h @ _weight(values, offs, plan, n_aff - 1) + _bias(values, offs, plan, n_aff - 1)

    cache = ForwardCache(NAME, plan, values, aff_inputs, aff_acts, bn, X.shape[0])
    return logits, cache


def backward(cache, d_logits):
    """Parameter gradient of the scalar loss whose logit gradient is d_logits."""
    plan = cache.plan
    values = cache.values
    offs = affine_offsets(plan)
    n_aff = len(offs)
    m_enc = enc_out_dim(plan)

    grad = np.zeros(plan.total)
    d = np.asarray(d_logits, dtype=np.float64)
    for i in range(n_aff - 1, -1, -1):
        h_in = cache.aff_inputs[i]
        ow, ob = offs[i]
        fi, fo = int(plan.layer_in[i]), int(plan.layer_out[i])
        grad[ow:ow + fi * fo] = (h_in.T @ d).ravel()
        grad[ob:ob + fo] = d.sum(axis=0)
        if i == 0:
            break
        d = d @ _weight(values, offs, plan, i).T
        if i == plan.n_enc and plan.bn_dim:
            d = d[:, :m_enc]  # batch-norm branch carries no parameters upstream
        a = cache.aff_acts[i - 1]
        d = d * (1.0 - a * a)
    return grad


def _softmax_ce(logits, labels):
    """Row softmax and per-sample cross-entropy, numerically stable."""
    zmax = logits.max(axis=1, keepdims=True)
    ez = np.exp(logits - zmax)
    Z = ez.sum(axis=1, keepdims=True)
    S = ez / Z
    lse = np.log(Z[:, 0]) + zmax[:, 0]
    c = lse - logits[np.arange(logits.shape[0]), labels]
    return S, c


def _focal_terms(c, eta, lam):
    """Per-sample focal loss and its derivative w.r.t. per-sample CE."""
    if lam == 0.0:
        return eta * c, np.full_like(c, eta)
    p = np.exp(-c)
    u = -np.expm1(-c)  # 1 - p, stable near c = 0
    ul = np.where(u > 0.0, u ** lam, 0.0)
    ulm1 = np.where(u > 0.0, u ** (lam - 1.0), 0.0)
    loss = eta * ul * c
    dldc = eta * (ul + lam * c * ulm1 * p)
    return loss, dldc


def _focal_grad_logits(logits, labels, eta, lam):
    """(mean focal loss, d(mean focal)/d logits, accuracy)."""
    n = logits.shape[0]
    S, c = _softmax_ce(logits, labels)
    loss, dldc = _focal_terms(c, eta, lam)
    d = S.copy()
    d[np.arange(n), labels] -= 1.0
    d *= (dldc / n)[:, None]
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return float(loss.mean()), d, acc


def adapt_eval(plan, values, Xs, ys, Xq, yq, alpha, steps, eta, lam, need_grad=True):
    """Gradient-descend the focal loss on the support set, score the query set.

    Returns (adapted values, query focal loss, query accuracy, query gradient
    or None).  Raises NumericsError if the adaptation diverges.
    """
    theta = np.array(values, dtype=np.float64)
    for _ in range(steps):
        logits, cache = forward(plan, theta, Xs)
        _, d, _ = _focal_grad_logits(logits, ys, eta, lam)
        theta = theta - alpha * backward(cache, d)
    logits, cache = forward(plan, theta, Xq)
    focal_q, d_q, acc_q = _focal_grad_logits(logits, yq, eta, lam)
    if not (np.isfinite(theta).all() and np.isfinite(focal_q)):
        raise NumericsError("non-finite values during support-set adaptation")
    grad_q = None
    if need_grad:
        grad_q = backward(cache, d_q)
        if not np.isfinite(grad_q).all():
            raise NumericsError("non-finite query gradient after adaptation")
    return theta, focal_q, acc_q, grad_q

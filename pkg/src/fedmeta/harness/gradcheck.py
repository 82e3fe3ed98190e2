"""Finite-difference validation of every gradient path.

Central differences with step 1e-5 against the analytic gradients, at f64.
Relative error per component is |a - b| / max(|a|, |b|, 1e-5); the floor
keeps the comparison meaningful where both sides are at the finite-difference
noise level.  The network grid covers 1-3 encoder layers with and without the
batch-norm branch, plus the bare linear model.
"""

from dataclasses import dataclass

import numpy as np

from ..losses import FocalParams, TaskOutcome, at_loss, cross_entropy, focal_loss
from ..numcore.model import Batch, ModelConfig, backward, forward, init_params
from ..seeds import derive_rng

FD_STEP = 1e-5
TOL = 1e-4
_REL_FLOOR = 1e-5


@dataclass
class PathResult:
    name: str
    max_rel_err: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), _REL_FLOOR)
    return float((np.abs(a - b) / denom).max())


def fd_grad(fn, x, step=FD_STEP):
    """Central-difference gradient of scalar fn over a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        g[i] = (fn(xp) - fn(xm)) / (2.0 * step)
    return g


def _logit_paths(rng):
    logits = rng.normal(0.0, 1.5, size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    paths = []

    _, g = cross_entropy(logits, labels)
    num = fd_grad(lambda v: cross_entropy(v.reshape(6, 4), labels)[0], logits.ravel())
    paths.append(("ce_logits", g.ravel(), num))

    fp = FocalParams(eta=5.0, lam=2.0)
    _, g = focal_loss(logits, labels, fp)
    num = fd_grad(lambda v: focal_loss(v.reshape(6, 4), labels, fp)[0], logits.ravel())
    paths.append(("focal_logits_eta5_lam2", g.ravel(), num))
    return paths


def _lambda0_identity(rng):
    logits = rng.normal(0.0, 1.5, size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    eta = 3.0
    _, g_focal = focal_loss(logits, labels, FocalParams(eta=eta, lam=0.0))
    _, g_ce = cross_entropy(logits, labels)
    return ("focal_lambda0_equals_eta_ce", g_focal.ravel(), eta * g_ce.ravel())


_NETWORK_GRID = (
    ("linear_nobn", (), 0, ()),
    ("enc1_bn", (8,), None, ()),
    ("enc2_bn", (8, 6), None, ()),
    ("enc3_bn", (8, 6, 5), None, ()),
    ("enc1_nobn", (8,), 0, ()),
    ("enc2_nobn", (8, 6), 0, ()),
    ("enc3_nobn", (8, 6, 5), 0, ()),
    ("enc2_bn_head", (8, 6), None, (7,)),
)


def _network_paths(rng):
    paths = []
    for name, enc, bn, head in _NETWORK_GRID:
        mcfg = ModelConfig(input_dim=7, encoder_dims=enc, bn_dim=bn,
                           head_dims=head, n_way=3)
        batch = Batch(rng.normal(0.0, 1.0, size=(6, 7)), rng.integers(0, 3, size=6))
        theta = init_params(mcfg, rng)
        for loss_name, loss_fn in (
            ("ce", lambda lg: cross_entropy(lg, batch.labels)),
            ("focal", lambda lg: focal_loss(lg, batch.labels, FocalParams(5.0, 2.0))),
        ):
            logits, cache = forward(theta, mcfg, batch)
            _, dlog = loss_fn(logits)
            analytic = backward(cache, dlog).values

            def scalar(v, _fn=loss_fn):
                lg, _ = forward(theta.with_values(v), mcfg, batch)
                return _fn(lg)[0]

            paths.append((f"net_{name}_{loss_name}", analytic,
                          fd_grad(scalar, theta.values)))
    return paths


def _at_loss_path(rng):
    """Attention-weighted combination of per-task focal gradients."""
    mcfg = ModelConfig(input_dim=5, encoder_dims=(6,), bn_dim=None,
                       head_dims=(), n_way=2)
    theta = init_params(mcfg, rng)
    phi = 2.0
    fp = FocalParams(5.0, 2.0)
    batches, base_accs = [], []
    for _ in range(3):
        b = Batch(rng.normal(0.0, 1.0, size=(8, 5)), rng.integers(0, 2, size=8))
        batches.append(b)
        logits, _ = forward(theta, mcfg, b)
        base_accs.append(max(float(np.mean(np.argmax(logits, 1) == b.labels)), 0.25))

    outcomes = []
    for b, acc in zip(batches, base_accs):
        logits, cache = forward(theta, mcfg, b)
        loss, dlog = focal_loss(logits, b.labels, fp)
        outcomes.append(TaskOutcome(loss, acc, backward(cache, dlog)))
    _, weights = at_loss(outcomes, phi, acc_floor=1e-3)
    analytic = sum(w * o.grad.values for w, o in zip(weights, outcomes))

    def scalar(v):
        # accuracies held constant: they are stop-gradients in the meta loss
        total = 0.0
        for b, acc in zip(batches, base_accs):
            logits, _ = forward(theta.with_values(v), mcfg, b)
            loss, _ = focal_loss(logits, b.labels, fp)
            total += -(loss ** phi) * np.log2(acc)
        return total

    return ("at_loss_composition", analytic, fd_grad(scalar, theta.values))


def run_gradcheck(tol=TOL, corrupt=None):
    """All gradient paths against finite differences; returns PathResult list.

    corrupt names a path whose analytic gradient gets perturbed first -- a
    negative control proving the checker reports failures by path name.
    """
    rng = derive_rng(7041)
    raw = []
    raw.extend(_logit_paths(rng))
    raw.append(_lambda0_identity(rng))
    raw.extend(_network_paths(rng))
    raw.append(_at_loss_path(rng))

    results = []
    for name, analytic, numeric in raw:
        analytic = np.array(analytic, dtype=np.float64)
        if corrupt == name:
            analytic[0] = analytic[0] * 1.5 + 1.0
        results.append(PathResult(name, rel_err(analytic, numeric), tol))
    return results


def format_results(results):
    lines = []
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{status:4s} {r.name:35s} max rel err {r.max_rel_err:.3e}")
    lines.append("PASS" if all(r.passed for r in results) else "FAIL")
    return "\n".join(lines)

import numpy as np
import pytest

from fedmeta.losses import (FocalParams, TaskOutcome, accuracy, at_loss,
                            cross_entropy, focal_loss)
from fedmeta.numcore import Layout, ParamSet


def independent_nll(logits, labels):
    """Separate log-sum-exp implementation of mean negative log likelihood."""
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        lse = m + np.log(sum(np.exp(v - m) for v in row))
        total += lse - row[y]
    return total / len(labels)


def test_cross_entropy_uniform_two_way():
    loss, _ = cross_entropy(np.array([[0.0, 0.0]]), np.array([0]))
    assert abs(loss - np.log(2)) < 1e-12
    loss1, _ = cross_entropy(np.array([[0.0, 0.0]]), np.array([1]))
    assert abs(loss1 - np.log(2)) < 1e-12


def test_cross_entropy_saturated_is_stable():
    loss, grad = cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
    assert 0.0 <= loss < 1e-10
    assert np.isfinite(grad).all()


def test_cross_entropy_matches_independent_oracle(rng):
    logits = rng.normal(0, 2, size=(17, 5))
    labels = rng.integers(0, 5, size=17)
    loss, _ = cross_entropy(logits, labels)
    assert abs(loss - independent_nll(logits, labels)) < 1e-12


def test_cross_entropy_gradient_is_softmax_minus_onehot(rng):
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    _, grad = cross_entropy(logits, labels)
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    S = z / z.sum(axis=1, keepdims=True)
    expected = (S - np.eye(4)[labels]) / 6
    assert np.abs(grad - expected).max() < 1e-12


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_focal_lambda_zero_reduces_to_scaled_ce(rng):
    logits = rng.normal(size=(8, 3))
    labels = rng.integers(0, 3, size=8)
    ce, ce_grad = cross_entropy(logits, labels)
    focal, f_grad = focal_loss(logits, labels, FocalParams(eta=5.0, lam=0.0))
    assert abs(focal - 5.0 * ce) < 1e-12
    assert np.abs(f_grad - 5.0 * ce_grad).max() < 1e-14


def test_focal_known_value_at_half_confidence():
    # per-sample CE = ln 2 so e^{-c} = 0.5; eta=5, lam=2 ->
    # 5 * (0.5)^2 * ln 2 = 0.866434...
    logits = np.array([[0.0, 0.0]])
    labels = np.array([0])
    loss, _ = focal_loss(logits, labels, FocalParams(eta=5.0, lam=2.0))
    assert abs(loss - 5.0 * 0.25 * np.log(2)) < 1e-12


def test_focal_gradient_matches_finite_differences(rng):
    fp = FocalParams(eta=5.0, lam=2.0)
    logits = rng.normal(0, 1.5, size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    _, grad = focal_loss(logits, labels, fp)
    step = 1e-5
    fd = np.zeros_like(logits)
    for i in range(6):
        for j in range(4):
            lp = logits.copy()
            lp[i, j] += step
            lm = logits.copy()
            lm[i, j] -= step
            fd[i, j] = (focal_loss(lp, labels, fp)[0]
                        - focal_loss(lm, labels, fp)[0]) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(fd)), 1e-5)
    assert (np.abs(grad - fd) / denom).max() < 1e-4


def test_focal_monotone_in_per_sample_ce():
    # 2-way logits [t, 0] with label 0 sweep per-sample CE continuously
    fp = FocalParams(eta=5.0, lam=2.0)
    losses = []
    for t in np.linspace(3.0, -3.0, 25):
        loss, _ = focal_loss(np.array([[t, 0.0]]), np.array([0]), fp)
        losses.append(loss)
    diffs = np.diff(losses)  # CE increases as t decreases
    assert (diffs > 0).all()


def test_focal_nonnegative_and_zero_iff_ce_zero(rng):
    fp = FocalParams(eta=5.0, lam=2.0)
    for _ in range(50):
        logits = rng.normal(0, 3, size=(4, 3))
        labels = rng.integers(0, 3, size=4)
        loss, _ = focal_loss(logits, labels, fp)
        assert loss >= 0.0
    # saturated-correct rows: CE is exactly 0 in f64, so focal is too
    loss, _ = focal_loss(np.array([[1000.0, 0.0]]), np.array([0]), fp)
    assert loss == 0.0


def test_focal_params_validate():
    with pytest.raises(ValueError):
        FocalParams(eta=-1.0, lam=2.0)
    with pytest.raises(ValueError):
        FocalParams(eta=1.0, lam=-0.5)


def _outcome(focal, acc):
    layout = Layout((("p", (1,)),))
    return TaskOutcome(focal, acc, ParamSet(layout, np.zeros(1)))


def test_at_loss_perfect_accuracy_contributes_nothing():
    loss, weights = at_loss([_outcome(3.7, 1.0)], phi=2.0, acc_floor=0.01)
    assert loss == 0.0
    assert weights == [0.0]


def test_at_loss_single_task_example():
    loss, weights = at_loss([_outcome(1.0, 0.5)], phi=2.0, acc_floor=0.01)
    assert abs(loss - 1.0) < 1e-12
    assert abs(weights[0] - 2.0) < 1e-12  # -2 * 1 * log2(0.5)


def test_at_loss_two_task_example():
    loss, _ = at_loss([_outcome(0.8664, 0.5), _outcome(0.2, 1.0)],
                      phi=2.0, acc_floor=0.01)
    assert abs(loss - 0.8664 ** 2) < 1e-9


def test_at_loss_phi_one_half_accuracy_is_plain_sum(rng):
    tasks = [_outcome(float(f), 0.5) for f in rng.random(6) * 3]
    loss, weights = at_loss(tasks, phi=1.0, acc_floor=0.01)
    assert abs(loss - sum(t.focal_loss for t in tasks)) < 1e-12
    assert all(abs(w - 1.0) < 1e-12 for w in weights)


def test_at_loss_monotone_properties(rng):
    for _ in range(30):
        f = float(rng.random() * 2 + 0.1)
        a = float(rng.random() * 0.8 + 0.1)
        base, _ = at_loss([_outcome(f, a)], phi=2.0, acc_floor=0.01)
        assert base >= 0.0
        worse_acc, _ = at_loss([_outcome(f, a * 0.9)], phi=2.0, acc_floor=0.01)
        assert worse_acc > base
        worse_focal, _ = at_loss([_outcome(f * 1.1, a)], phi=2.0, acc_floor=0.01)
        assert worse_focal > base


def test_at_loss_clamps_zero_accuracy():
    loss, weights = at_loss([_outcome(1.0, 0.0)], phi=2.0, acc_floor=1 / 40)
    assert loss == -np.log2(1 / 40)
    assert np.isfinite(weights[0])


def test_at_loss_empty_rejected():
    with pytest.raises(ValueError):
        at_loss([], phi=2.0, acc_floor=0.01)


def test_accuracy_all_correct():
    logits = np.array([[2.0, 0.0], [0.0, 2.0]])
    assert accuracy(logits, np.array([0, 1])) == 1.0


def test_accuracy_tie_break_lowest_class():
    logits = np.zeros((4, 2))
    labels = np.array([0, 1, 0, 1])
    assert accuracy(logits, labels) == 0.5


def test_accuracy_matches_brute_force(rng):
    logits = rng.normal(size=(23, 5))
    labels = rng.integers(0, 5, size=23)
    count = 0
    for row, y in zip(logits, labels):
        best = 0
        for j in range(1, 5):
            if row[j] > row[best]:
                best = j
        count += best == y
    assert accuracy(logits, labels) == count / 23

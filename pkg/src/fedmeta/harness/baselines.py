"""Direct few-shot baselines: no meta-learning, trained on each test episode's
support set and scored on its query set.

Gradient baselines (a four-affine-layer MLP and logistic regression) train
for five full-batch Adam iterations with the same optimizer settings as the
meta-learner.  KNN votes among the k_shot nearest support rows, ties broken
toward the lowest class id.
"""

import numpy as np

from ..losses import accuracy, cross_entropy
from ..metalearn import MetaConfig
from ..numcore.model import Batch, ModelConfig, backward, forward, init_params, zero_params
from ..numcore.optim import AdamState, adam_step
from ..seeds import STREAM_BASELINE, derive_rng

BASELINE_STEPS = 5

MLP_DIMS = (64, 32, 16)  # three hidden affines + output affine = four linear layers
LR_DIMS = ()             # single affine = logistic regression


def _gradient_baseline_accuracy(episode, hidden_dims, cfg: MetaConfig, rng,
                                zero_init=False) -> float:
    mcfg = ModelConfig(
        input_dim=episode.support.features.shape[1],
        encoder_dims=hidden_dims,
        bn_dim=0,
        head_dims=(),
        n_way=cfg.n_way,
    )
    # convex LR starts from zeros (conventional); the MLP needs random
    # weights to break hidden-unit symmetry
    theta = zero_params(mcfg) if zero_init else init_params(mcfg, rng)
    opt = AdamState.zeros(theta.layout)
    for _ in range(BASELINE_STEPS):
        logits, cache = forward(theta, mcfg, episode.support)
        _, dlog = cross_entropy(logits, episode.support.labels)
        theta = adam_step(theta, backward(cache, dlog), opt, cfg.beta, cfg.weight_decay)
    logits, _ = forward(theta, mcfg, episode.query)
    return accuracy(logits, episode.query.labels)


def knn_accuracy(episode, n_neighbors: int, n_way: int) -> float:
    sup = episode.support.features
    sup_y = episode.support.labels
    correct = 0
    for row, label in zip(episode.query.features, episode.query.labels):
        d = np.sqrt(((sup - row) ** 2).sum(axis=1))
        order = np.argsort(d, kind="stable")[:n_neighbors]
        votes = np.bincount(sup_y[order], minlength=n_way)
        if votes.argmax() == label:
            correct += 1
    return correct / episode.query.rows


def baseline_episode_accuracy(kind: str, episode, cfg: MetaConfig, rng) -> float:
    if kind == "mlp":
        return _gradient_baseline_accuracy(episode, MLP_DIMS, cfg, rng)
    if kind == "lr":
        return _gradient_baseline_accuracy(episode, LR_DIMS, cfg, rng, zero_init=True)
    if kind == "knn":
        return knn_accuracy(episode, n_neighbors=cfg.k_shot, n_way=cfg.n_way)
    raise ValueError(f"unknown baseline kind {kind!r}")


def baseline_direct(kind: str, episodes, cfg: MetaConfig, seed: int) -> float:
    """Mean query accuracy of a direct baseline over the given test episodes."""
    accs = [
        baseline_episode_accuracy(kind, ep, cfg, derive_rng(seed, STREAM_BASELINE, i))
        for i, ep in enumerate(episodes)
    ]
    return float(np.mean(accs))

"""Episodic meta-training on one client.

The training loop is the usual two-level scheme: the inner loop adapts the
shared initialization to one sampled task with plain gradient descent on the
support-set focal loss; the outer loop scores every adapted model on its
query set and updates the initialization from the combined task gradients.
With ``outer_loss="attention"`` the per-task gradients are weighted by the
accuracy-attention coefficients from :func:`fedmeta.losses.at_loss`; with
``"sum"`` they are summed unweighted, which (together with eta=1, lam=0) is
the plain first-order MAML baseline.

Meta-gradients are first order: the adapted parameters' dependence on the
initialization is treated as the identity, so query gradients at the adapted
point are used directly.  ``first_order=False`` is reserved for an exact
second-order path and currently raises.

Determinism: every function is a pure function of its inputs and the passed
generator; repeated runs are bit-identical.
"""

import json
import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import _kernels
from .errors import EpisodeInfeasibleError, LayoutError
from .losses import FocalParams, TaskOutcome, at_loss
from .numcore.io import load_paramset, save_paramset
from .numcore.model import Batch, ModelConfig, build_layout, plan_for
from .numcore.optim import AdamState, adam_step, sgd_step
from .numcore.params import ParamSet, lincomb

log = logging.getLogger(__name__)

OUTER_ATTENTION = "attention"
OUTER_SUM = "sum"


@dataclass(frozen=True)
class Episode:
    """One few-shot task: disjoint support/query batches with local labels."""

    support: Batch
    query: Batch
    class_map: tuple  # original class id per episode-local label

    def acc_floor(self):
        """Smallest meaningful accuracy: half of one query sample."""
        return 1.0 / (2.0 * self.query.rows)


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 0.01            # inner-loop learning rate
    beta: float = 0.001            # outer-loop learning rate
    focal: FocalParams = FocalParams()
    phi: float = 2.0               # attention scale on task focal losses
    n_way: int = 2
    k_shot: int = 5
    q_per_class: int = None        # None resolves to 2 * k_shot
    tasks_per_episode: int = 10
    adapt_steps: int = 5
    finetune_steps: int = 5
    first_order: bool = True
    outer_optimizer: str = "adam"  # "adam" (decoupled weight decay) or "sgd"
    weight_decay: float = 0.1
    outer_loss: str = OUTER_ATTENTION

    def __post_init__(self):
        if self.q_per_class is None:
            object.__setattr__(self, "q_per_class", 2 * self.k_shot)
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("learning rates must be non-negative")
        if self.n_way < 2 or self.k_shot < 1 or self.q_per_class < 1:
            raise ValueError("n_way >= 2, k_shot >= 1, q_per_class >= 1 required")
        if self.tasks_per_episode < 1 or self.adapt_steps < 1:
            raise ValueError("tasks_per_episode >= 1 and adapt_steps >= 1 required")
        if self.finetune_steps < 0:
            raise ValueError("finetune_steps must be >= 0")
        if self.outer_optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown outer optimizer {self.outer_optimizer!r}")
        if self.outer_loss not in (OUTER_ATTENTION, OUTER_SUM):
            raise ValueError(f"unknown outer loss {self.outer_loss!r}")


_warned_small_classes = set()


def sample_episode(pool, cfg: MetaConfig, rng, allow_reduced_query=False) -> Episode:
    """Draw an n_way/k_shot episode from a class-bucketed pool.

    Classes are drawn uniformly without replacement, then k_shot + q_per_class
    rows per class without replacement; the first k_shot go to the support
    set.  Episode-local labels follow the drawn class order.

    With allow_reduced_query (meta-test pools with very small classes), a
    class with fewer than k + q rows contributes q' = available - k query
    rows instead, and classes with no query row left are excluded from
    sampling with a one-time warning.
    """
    k, q, n = cfg.k_shot, cfg.q_per_class, cfg.n_way
    classes = pool.classes()
    if allow_reduced_query:
        usable = []
        for c in classes:
            if pool.class_size(c) > k:
                usable.append(c)
            else:
                key = (c, pool.class_size(c), k)
                if key not in _warned_small_classes:
                    _warned_small_classes.add(key)
                    log.warning(
                        "class %d has %d samples, too few for %d-shot episodes; excluded",
                        c, pool.class_size(c), k,
                    )
        classes = usable
    if len(classes) < n:
        raise EpisodeInfeasibleError(
            f"pool has {len(classes)} usable classes, episode needs {n}"
        )
    drawn = rng.choice(np.asarray(classes, dtype=np.int64), size=n, replace=False)

    sup_feats, sup_labels, qry_feats, qry_labels = [], [], [], []
    for local, cid in enumerate(int(c) for c in drawn):
        bucket = pool.class_index[cid]
        avail = len(bucket)
        if allow_reduced_query:
            q_c = min(q, avail - k)
        else:
            if avail < k + q:
                raise EpisodeInfeasibleError(
                    f"class {cid} has {avail} samples, episode needs {k + q}"
                )
            q_c = q
        idx = rng.choice(bucket, size=k + q_c, replace=False)
        sup_feats.append(pool.features[idx[:k]])
        qry_feats.append(pool.features[idx[k:]])
        sup_labels.extend([local] * k)
        qry_labels.extend([local] * q_c)

    support = Batch(np.concatenate(sup_feats), np.asarray(sup_labels, dtype=np.int64))
    query = Batch(np.concatenate(qry_feats), np.asarray(qry_labels, dtype=np.int64))
    return Episode(support, query, tuple(int(c) for c in drawn))


def inner_adapt(theta: ParamSet, episode: Episode, mcfg: ModelConfig, cfg: MetaConfig):
    """Adapt theta on the support set, score the query set.

    Returns (adapted parameters, TaskOutcome with the query focal loss,
    accuracy, and gradient at the adapted point).  theta is never mutated.
    """
    layout = build_layout(mcfg)
    if theta.layout != layout:
        raise LayoutError("theta layout does not match the model config")
    values, focal_q, acc_q, grad_q = _kernels.active.adapt_eval(
        plan_for(mcfg), theta.values,
        episode.support.features, episode.support.labels,
        episode.query.features, episode.query.labels,
        cfg.alpha, cfg.adapt_steps, cfg.focal.eta, cfg.focal.lam,
        need_grad=True,
    )
    outcome = TaskOutcome(focal_q, acc_q, ParamSet(layout, grad_q))
    return ParamSet(layout, values), outcome


def meta_update(theta: ParamSet, episodes, mcfg: ModelConfig, cfg: MetaConfig,
                opt: AdamState) -> ParamSet:
    """One outer-loop step over a task batch."""
    episodes = list(episodes)
    if len(episodes) != cfg.tasks_per_episode:
        raise ValueError(
            f"{len(episodes)} episodes but tasks_per_episode={cfg.tasks_per_episode}"
        )
    if not cfg.first_order:
        raise NotImplementedError("exact second-order meta-gradients are not implemented")
    outcomes = []
    for ep in episodes:
        _, outcome = inner_adapt(theta, ep, mcfg, cfg)
        outcomes.append(outcome)
    if cfg.outer_loss == OUTER_ATTENTION:
        _, weights = at_loss(outcomes, cfg.phi, acc_floor=episodes[0].acc_floor())
    else:
        weights = [1.0] * len(outcomes)
    meta_grad = lincomb([o.grad for o in outcomes], weights)
    if cfg.outer_optimizer == "adam":
        return adam_step(theta, meta_grad, opt, cfg.beta, cfg.weight_decay)
    return sgd_step(theta, meta_grad, cfg.beta)


def train_local(theta: ParamSet, pool, mcfg: ModelConfig, cfg: MetaConfig,
                episodes_budget: int, rng, trace_every=0, trace_fn=None) -> ParamSet:
    """Run episodes_budget outer iterations of meta-training; returns the final model."""
    opt = AdamState.zeros(theta.layout)
    for it in range(episodes_budget):
        eps = [sample_episode(pool, cfg, rng) for _ in range(cfg.tasks_per_episode)]
        theta = meta_update(theta, eps, mcfg, cfg, opt)
        if trace_fn is not None and trace_every and (it + 1) % trace_every == 0:
            trace_fn(it + 1, theta)
    return theta


def train_plain(theta: ParamSet, pool, mcfg: ModelConfig, cfg: MetaConfig,
                episodes_budget: int, rng, trace_every=0, trace_fn=None) -> ParamSet:
    """Non-meta control: direct cross-entropy training on episode batches.

    Same episode stream and step budget shape as train_local, but each task's
    support and query rows form one batch for a single Adam step.  Stands in
    for conventionally trained (non-episodic) client models in federation
    variants.
    """
    from .losses import cross_entropy
    from .numcore.model import backward, forward

    opt = AdamState.zeros(theta.layout)
    for it in range(episodes_budget):
        for _ in range(cfg.tasks_per_episode):
            ep = sample_episode(pool, cfg, rng)
            batch = Batch(
                np.concatenate([ep.support.features, ep.query.features]),
                np.concatenate([ep.support.labels, ep.query.labels]),
            )
            logits, cache = forward(theta, mcfg, batch)
            _, dlog = cross_entropy(logits, batch.labels)
            theta = adam_step(theta, backward(cache, dlog), opt, cfg.beta, cfg.weight_decay)
        if trace_fn is not None and trace_every and (it + 1) % trace_every == 0:
            trace_fn(it + 1, theta)
    return theta


def finetune_eval_on(theta: ParamSet, episodes, mcfg: ModelConfig, cfg: MetaConfig) -> float:
    """Mean query accuracy after finetune_steps support-set steps per episode."""
    plan = plan_for(mcfg)
    accs = []
    for ep in episodes:
        _, _, acc, _ = _kernels.active.adapt_eval(
            plan, theta.values,
            ep.support.features, ep.support.labels,
            ep.query.features, ep.query.labels,
            cfg.alpha, cfg.finetune_steps, cfg.focal.eta, cfg.focal.lam,
            need_grad=False,
        )
        accs.append(acc)
    return float(np.mean(accs))


def finetune_eval(theta: ParamSet, test_pool, mcfg: ModelConfig, cfg: MetaConfig,
                  episodes: int, rng) -> float:
    """Sample test episodes and score theta on them; theta is never mutated."""
    eps = [sample_episode(test_pool, cfg, rng, allow_reduced_query=True)
           for _ in range(episodes)]
    return finetune_eval_on(theta, eps, mcfg, cfg)


def finetune_curve(theta: ParamSet, test_pool, mcfg: ModelConfig, cfg: MetaConfig,
                   steps_list, episodes: int, rng):
    """Mean meta-test accuracy at each fine-tuning step count, on shared episodes."""
    eps = [sample_episode(test_pool, cfg, rng, allow_reduced_query=True)
           for _ in range(episodes)]
    return [
        finetune_eval_on(theta, eps, mcfg, replace(cfg, finetune_steps=int(s)))
        for s in steps_list
    ]


def save_checkpoint(base_path, theta: ParamSet, cfg: MetaConfig):
    """ParamSet binary plus MetaConfig JSON sidecar at base_path.{pset,meta.json}."""
    base = str(base_path)
    save_paramset(base + ".pset", theta)
    with open(base + ".meta.json", "w") as f:
        json.dump(asdict(cfg), f, indent=2, sort_keys=True)


def load_checkpoint(base_path):
    base = str(base_path)
    theta = load_paramset(base + ".pset")
    with open(base + ".meta.json") as f:
        raw = json.load(f)
    raw["focal"] = FocalParams(**raw["focal"])
    return theta, MetaConfig(**raw)

"""Simulated federation: accuracy-gated client selection and weighted fusion.

One fusion round: broadcast the global parameters, let every client train
locally, score every client model (and the global model) on a fixed shared
evaluation episode set, select clients whose accuracy reaches the previous
global accuracy, and fuse the selected models.  The first round skips the
gate and average-fuses everyone.  Three fusion policies:

* ``dynamic_weight``     gate + accuracy-proportional weights
* ``accuracy_gate_only`` gate + uniform weights over the selected set
* ``average``            no gate, uniform weights (plain federated averaging)

"Upload" is a counted event (one per selected client per round), the
simulator's proxy for communication cost.  If no client passes the gate the
global model carries over unchanged and the round uploads nothing.

Determinism: per-client training generators derive from (master seed, client
id, round), never from scheduling order.  Evaluation episodes derive from
(eval_seed, master seed, round): every model scored in a round sees the same
episodes, so the gate comparison is fair, while the set is redrawn each round
so accuracy estimates stay honest across rounds instead of overfitting the
gate to one fixed set.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .errors import DataFormatError, FedmetaError
from .metalearn import MetaConfig, finetune_eval_on, sample_episode, train_local
from .numcore.io import save_paramset
from .numcore.model import ModelConfig
from .numcore.params import ParamSet, weighted_sum
from .seeds import STREAM_CLIENT, STREAM_EVAL, derive_rng

log = logging.getLogger(__name__)

KIND_DWA = "dynamic_weight"
KIND_GATE_ONLY = "accuracy_gate_only"
KIND_AVERAGE = "average"
POLICY_KINDS = (KIND_DWA, KIND_GATE_ONLY, KIND_AVERAGE)

LOG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FusionPolicy:
    kind: str = KIND_DWA
    eval_episodes: int = 30
    eval_seed: int = 101

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown fusion policy {self.kind!r}")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")


@dataclass
class ClientState:
    """One hospital: its class shard, current local model, last gate accuracy."""

    id: int
    shard: LabeledDataset
    model: ParamSet = None
    last_acc: float = float("nan")


@dataclass(frozen=True)
class RoundRecord:
    round: int
    global_acc_prev: float
    client_accs: tuple   # accuracy per client, None where the client failed
    selected: tuple      # client ids fused this round
    weights: tuple       # fusion weight per selected id, same order
    uploads: int
    global_acc_new: float


@dataclass
class FederationState:
    global_model: ParamSet
    clients: list
    eval_pool: LabeledDataset
    policy: FusionPolicy
    model_cfg: ModelConfig
    meta_cfg: MetaConfig
    master_seed: int
    trainer: callable = train_local
    model_dir: str = None           # when set, per-round client models are saved
    records: list = field(default_factory=list)
    global_acc: float = None        # post-fusion accuracy of the current global model
    _round_episodes: tuple = None   # (round, episode list) cache

    def __post_init__(self):
        for i, c in enumerate(self.clients):
            if c.id != i:
                raise ValueError("client ids must be consecutive list positions")

    @property
    def round_idx(self):
        return len(self.records)

    def eval_episodes(self, round_no):
        """Evaluation episode set of one round, identical for every model."""
        if self._round_episodes is None or self._round_episodes[0] != round_no:
            rng = derive_rng(self.policy.eval_seed, STREAM_EVAL,
                             self.master_seed, round_no)
            eps = [
                sample_episode(self.eval_pool, self.meta_cfg, rng,
                               allow_reduced_query=True)
                for _ in range(self.policy.eval_episodes)
            ]
            self._round_episodes = (round_no, eps)
        return self._round_episodes[1]


def evaluate(model: ParamSet, state: FederationState, round_no=None) -> float:
    """Score a model on the round's shared evaluation episodes."""
    if round_no is None:
        round_no = state.round_idx + 1
    return finetune_eval_on(model, state.eval_episodes(round_no),
                            state.model_cfg, state.meta_cfg)


def select_clients(global_acc_prev, client_accs):
    """Ids whose accuracy reaches the previous global accuracy (inclusive)."""
    return tuple(
        i for i, acc in enumerate(client_accs)
        if acc is not None and acc >= global_acc_prev
    )


def fusion_weights(selected_accs):
    """Accuracy-proportional weights; uniform if every accuracy is zero."""
    accs = np.asarray(list(selected_accs), dtype=np.float64)
    if accs.size == 0:
        raise ValueError("fusion_weights needs at least one accuracy")
    if (accs < 0).any() or (accs > 1).any():
        raise ValueError("accuracies must lie in [0, 1]")
    total = accs.sum()
    if total == 0.0:
        return np.full(accs.size, 1.0 / accs.size)
    return accs / total


def run_round(state: FederationState, local_episodes: int) -> RoundRecord:
    """Execute one fusion round and append its record."""
    r = state.round_idx + 1
    theta = state.global_model

    accs = []
    for c in state.clients:
        rng = derive_rng(state.master_seed, STREAM_CLIENT, c.id, r)
        try:
            c.model = state.trainer(theta, c.shard, state.model_cfg, state.meta_cfg,
                                    local_episodes, rng)
            acc = evaluate(c.model, state)
        except FedmetaError as e:
            log.warning("client %d failed in round %d and is excluded: %s", c.id, r, e)
            c.model = None
            acc = None
        c.last_acc = float("nan") if acc is None else acc
        accs.append(acc)

    ok_ids = tuple(i for i, a in enumerate(accs) if a is not None)
    global_prev = state.global_acc if state.global_acc is not None else evaluate(theta, state)

    gated = state.policy.kind in (KIND_DWA, KIND_GATE_ONLY)
    if r == 1 or not gated:
        selected = ok_ids  # first round: everyone uploads, average fusion
    else:
        selected = select_clients(global_prev, accs)

    if selected:
        if r > 1 and state.policy.kind == KIND_DWA:
            weights = fusion_weights([accs[i] for i in selected])
        else:
            weights = np.full(len(selected), 1.0 / len(selected))
        new_global = weighted_sum([state.clients[i].model for i in selected], weights)
        new_acc = evaluate(new_global, state)
    else:
        weights = np.zeros(0)
        new_global = theta
        new_acc = global_prev

    if state.model_dir is not None:
        _save_round_models(state, r)

    state.global_model = new_global
    state.global_acc = new_acc
    rec = RoundRecord(
        round=r,
        global_acc_prev=global_prev,
        client_accs=tuple(accs),
        selected=selected,
        weights=tuple(float(w) for w in weights),
        uploads=len(selected),
        global_acc_new=new_acc,
    )
    state.records.append(rec)
    return rec


def run_federation(state: FederationState, rounds: int, local_episodes: int,
                   record_hook=None):
    """Run fusion rounds; returns (records, final global model)."""
    for _ in range(rounds):
        rec = run_round(state, local_episodes)
        if record_hook is not None:
            record_hook(rec)
    return list(state.records), state.global_model


def _save_round_models(state, r):
    import os

    rdir = os.path.join(state.model_dir, f"round{r:04d}")
    os.makedirs(rdir, exist_ok=True)
    for c in state.clients:
        if c.model is not None:
            save_paramset(os.path.join(rdir, f"client{c.id}.pset"), c.model)


# round log: JSON lines, one record per line, schema-versioned

def record_to_json(rec: RoundRecord) -> dict:
    return {
        "schema_version": LOG_SCHEMA_VERSION,
        "round": rec.round,
        "global_acc_prev": rec.global_acc_prev,
        "client_accs": list(rec.client_accs),
        "selected": list(rec.selected),
        "weights": list(rec.weights),
        "uploads": rec.uploads,
        "global_acc_new": rec.global_acc_new,
    }


def record_from_json(d: dict) -> RoundRecord:
    if d.get("schema_version") != LOG_SCHEMA_VERSION:
        raise DataFormatError(
            f"round log schema {d.get('schema_version')!r} unsupported"
        )
    return RoundRecord(
        round=int(d["round"]),
        global_acc_prev=float(d["global_acc_prev"]),
        client_accs=tuple(None if a is None else float(a) for a in d["client_accs"]),
        selected=tuple(int(i) for i in d["selected"]),
        weights=tuple(float(w) for w in d["weights"]),
        uploads=int(d["uploads"]),
        global_acc_new=float(d["global_acc_new"]),
    )


def write_round_log(path, records):
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(record_to_json(rec), sort_keys=True) + "\n")


def read_round_log(path):
    records = []
    with open(path) as f:
        for line in f:
            if line.strip():
                records.append(record_from_json(json.loads(line)))
    return records


def replay_round_log(records, model_dir, state: FederationState):
    """Re-fuse logged client models with logged weights; verify logged accuracy.

    Returns the max |refused accuracy - logged accuracy| over rounds with a
    non-empty selection (0.0 when the log replays exactly).
    """
    import os

    from .numcore.io import load_paramset

    worst = 0.0
    for rec in records:
        if not rec.selected:
            continue
        models = [
            load_paramset(os.path.join(model_dir, f"round{rec.round:04d}",
                                       f"client{i}.pset"))
            for i in rec.selected
        ]
        fused = weighted_sum(models, np.asarray(rec.weights))
        acc = evaluate(fused, state, round_no=rec.round)
        worst = max(worst, abs(acc - rec.global_acc_new))
    return worst

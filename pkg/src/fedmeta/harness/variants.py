"""Experiment variant matrix.

Twelve named variants cover the ablation grid: local-only learners (single
site on all common classes, or per-hospital three-class shards), federated
runs crossing {average, dynamic-weight} fusion with {plain, MAML-style,
attention-based} local learners, and direct few-shot baselines.

The MAML-style learner is the attention learner with eta=1, lam=0 (focal
reduces to cross-entropy) and the unweighted summed outer loss.  The "plain"
learner trains the same architecture non-episodically (direct cross-entropy
on episode batches); it stands in for conventionally trained client models.
FedAcc-named variants use the full dynamic-weight policy (gate plus
accuracy-proportional weights); the gate-with-uniform-weights policy remains
selectable through the fusion config section for custom runs.
"""

from dataclasses import dataclass, replace

from ..errors import ConfigError
from ..fedsim import KIND_AVERAGE, KIND_DWA
from ..losses import FocalParams
from ..metalearn import OUTER_SUM, MetaConfig

TOPO_FEDERATED = "federated"
TOPO_LOCAL_SINGLE = "local_single"
TOPO_LOCAL_HOSPITALS = "local_hospitals"
TOPO_BASELINE = "baseline"

LEARNER_META = "meta"
LEARNER_PLAIN = "plain"


@dataclass(frozen=True)
class VariantPlan:
    name: str
    topology: str
    policy_kind: str = None     # federated only
    learner: str = LEARNER_META
    maml_mode: bool = False     # eta=1, lam=0, summed outer loss
    baseline_kind: str = None   # baseline only: "mlp" | "lr" | "knn"


_VARIANTS = {
    "ATML_local": VariantPlan("ATML_local", TOPO_LOCAL_SINGLE),
    "MAML_local": VariantPlan("MAML_local", TOPO_LOCAL_SINGLE, maml_mode=True),
    "ATML3_local": VariantPlan("ATML3_local", TOPO_LOCAL_HOSPITALS),
    "FedAvg_plain": VariantPlan("FedAvg_plain", TOPO_FEDERATED, KIND_AVERAGE, LEARNER_PLAIN),
    "FedAvg_MAML": VariantPlan("FedAvg_MAML", TOPO_FEDERATED, KIND_AVERAGE, maml_mode=True),
    "FedAvg_ATML3": VariantPlan("FedAvg_ATML3", TOPO_FEDERATED, KIND_AVERAGE),
    "FedAcc_plain": VariantPlan("FedAcc_plain", TOPO_FEDERATED, KIND_DWA, LEARNER_PLAIN),
    "FedAcc_MAML": VariantPlan("FedAcc_MAML", TOPO_FEDERATED, KIND_DWA, maml_mode=True),
    "DWA_FML": VariantPlan("DWA_FML", TOPO_FEDERATED, KIND_DWA),
    "baseline_MLP": VariantPlan("baseline_MLP", TOPO_BASELINE, baseline_kind="mlp"),
    "baseline_LR": VariantPlan("baseline_LR", TOPO_BASELINE, baseline_kind="lr"),
    "baseline_KNN": VariantPlan("baseline_KNN", TOPO_BASELINE, baseline_kind="knn"),
}

ALL_VARIANTS = tuple(_VARIANTS)


def plan_variant(name: str) -> VariantPlan:
    try:
        return _VARIANTS[name]
    except KeyError:
        raise ConfigError(
            f"run.variant: {name!r} is not one of {sorted(_VARIANTS)}"
        ) from None


def effective_meta(cfg: MetaConfig, plan: VariantPlan) -> MetaConfig:
    """Meta settings after variant adjustments."""
    if plan.maml_mode:
        return replace(cfg, focal=FocalParams(eta=1.0, lam=0.0), outer_loss=OUTER_SUM)
    return cfg

"""Dense numeric core: parameters, the two-branch learner, optimizer steps."""

from .params import Layout, ParamSet, lincomb, weighted_sum
from .model import Batch, ModelConfig, backward, build_layout, forward, init_params, plan_for, zero_params
from .optim import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, AdamState, adam_step, sgd_step
from .io import dump_paramset_json, load_paramset, paramset_debug_dict, save_paramset

__all__ = [
    "Layout", "ParamSet", "lincomb", "weighted_sum",
    "Batch", "ModelConfig", "backward", "build_layout", "forward",
    "init_params", "plan_for", "zero_params",
    "ADAM_BETA1", "ADAM_BETA2", "ADAM_EPS", "AdamState", "adam_step", "sgd_step",
    "dump_paramset_json", "load_paramset", "paramset_debug_dict", "save_paramset",
]

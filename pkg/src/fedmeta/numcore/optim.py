"""Optimizer steps over flat parameter vectors.

Adam uses the standard bias-corrected moments (beta1=0.9, beta2=0.999,
eps=1e-8) with decoupled weight decay: the decay multiplies the parameters
directly instead of being folded into the gradient.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import NumericsError
from .params import ParamSet, check_same_layout

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators; single-owner, mutated by adam_step."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, layout):
        return cls(m=np.zeros(layout.total), v=np.zeros(layout.total))


def _check_grad(grad):
    if not np.isfinite(grad.values).all():
        bad = int(np.count_nonzero(~np.isfinite(grad.values)))
        raise NumericsError(
            f"gradient has {bad} non-finite components; training aborted"
        )


def adam_step(params: ParamSet, grad: ParamSet, state: AdamState,
              lr: float, weight_decay: float) -> ParamSet:
    """One Adam update with decoupled weight decay; advances *state*."""
    check_same_layout(params, grad)
    _check_grad(grad)
    g = grad.values
    state.t += 1
    state.m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * g
    state.v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * (g * g)
    m_hat = state.m / (1.0 - ADAM_BETA1 ** state.t)
    v_hat = state.v / (1.0 - ADAM_BETA2 ** state.t)
    new = params.values - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS) \
        - lr * weight_decay * params.values
    if not np.isfinite(new).all():
        raise NumericsError("non-finite parameters after Adam step")
    return params.with_values(new)


def sgd_step(params: ParamSet, grad: ParamSet, lr: float) -> ParamSet:
    """Plain gradient descent: p - lr * g."""
    check_same_layout(params, grad)
    _check_grad(grad)
    new = params.values - lr * grad.values
    if not np.isfinite(new).all():
        raise NumericsError("non-finite parameters after SGD step")
    return params.with_values(new)

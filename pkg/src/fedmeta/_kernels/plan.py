"""Model plan shared by the kernel backends.

A plan is the numeric skeleton of the two-branch learner: the fan-in/fan-out
of every affine layer in canonical order (encoder stack, classifier hidden
stack, output layer), the encoder depth, and the width of the parameter-free
batch-norm branch.  Parameter offsets into the flat value vector follow from
walking the layers in order; the named layout in ``numcore`` walks the same
order, which a test pins.
"""

from dataclasses import dataclass

import numpy as np

BN_EPS = 1e-5


@dataclass(frozen=True, eq=False)
class KernelPlan:
    layer_in: np.ndarray   # int64 fan-in per affine layer
    layer_out: np.ndarray  # int64 fan-out per affine layer
    n_enc: int             # number of encoder affine layers (tanh after each)
    bn_dim: int            # batch-norm branch width (0 = branch disabled)
    input_dim: int
    n_way: int
    total: int             # flat parameter count


def build_plan(input_dim, encoder_dims, bn_dim, head_dims, n_way):
    enc_out_dim = encoder_dims[-1] if encoder_dims else input_dim
    ins, outs = [], []
    prev = input_dim
    for w in encoder_dims:
        ins.append(prev)
        outs.append(w)
        prev = w
    prev = enc_out_dim + bn_dim
    for w in head_dims:
        ins.append(prev)
        outs.append(w)
        prev = w
    ins.append(prev)
    outs.append(n_way)
    total = sum(fi * fo + fo for fi, fo in zip(ins, outs))
    return KernelPlan(
        layer_in=np.asarray(ins, dtype=np.int64),
        layer_out=np.asarray(outs, dtype=np.int64),
        n_enc=len(encoder_dims),
        bn_dim=int(bn_dim),
        input_dim=int(input_dim),
        n_way=int(n_way),
        total=int(total),
    )


def affine_offsets(plan):
    """(weight_offset, bias_offset) per affine layer, in layer order."""
    offs = []
    off = 0
    for fi, fo in zip(plan.layer_in, plan.layer_out):
        offs.append((off, off + int(fi) * int(fo)))
        off += int(fi) * int(fo) + int(fo)
    return offs


def enc_out_dim(plan):
    if plan.n_enc:
        return int(plan.layer_out[plan.n_enc - 1])
    return plan.input_dim


class ForwardCache:
    """Intermediates one backward pass needs.

    ``backend`` names the backend that produced the cache so gradients are
    always computed by the same arithmetic that ran the forward pass.
    ``layout`` is attached by the numcore wrapper; raw kernel users leave it
    None.
    """

    __slots__ = ("backend", "plan", "values", "aff_inputs", "aff_acts",
                 "bn_out", "n_rows", "layout")

    def __init__(self, backend, plan, values, aff_inputs, aff_acts, bn_out, n_rows):
        self.backend = backend
        self.plan = plan
        self.values = values
        self.aff_inputs = aff_inputs
        self.aff_acts = aff_acts
        self.bn_out = bn_out
        self.n_rows = n_rows
        self.layout = None

"""The two-branch base learner.

Architecture: an encoder branch (affine + tanh stack) maps the input to an
m-dimensional vector; a parameter-free batch-norm branch standardizes the raw
features per batch to a b-dimensional vector (b = input width); the two are
concatenated and fed to a classifier head (affine + tanh hiddens, linear
output of n_way logits).

Batch-norm uses the statistics of the current batch only, during both
adaptation and evaluation: episodes are tiny and independent, and running
averages would leak across tasks.  The branch has no learnable scale/shift,
so its output has exact per-feature mean zero within each batch.

All math is f64.  Forward and backward delegate to the active kernel backend
(compiled extension when built, numpy otherwise).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import _kernels
from .._kernels.plan import build_plan
from ..errors import LayoutError
from .params import Layout, ParamSet


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    encoder_dims: tuple = (64, 32)
    bn_dim: int = None  # None resolves to input_dim; 0 disables the branch
    head_dims: tuple = (32,)
    n_way: int = 2

    def __post_init__(self):
        object.__setattr__(self, "encoder_dims", tuple(int(d) for d in self.encoder_dims))
        object.__setattr__(self, "head_dims", tuple(int(d) for d in self.head_dims))
        bn = self.input_dim if self.bn_dim is None else int(self.bn_dim)
        object.__setattr__(self, "bn_dim", bn)
        if self.input_dim < 1:
            raise LayoutError("input_dim must be >= 1")
        if self.n_way < 2:
            raise LayoutError("n_way must be >= 2")
        if any(d < 1 for d in self.encoder_dims + self.head_dims):
            raise LayoutError("layer widths must be >= 1")
        if bn not in (0, self.input_dim):
            raise LayoutError("bn_dim must be 0 or equal to input_dim")

    @property
    def encoder_out_dim(self):
        return self.encoder_dims[-1] if self.encoder_dims else self.input_dim

    @property
    def head_in_dim(self):
        return self.encoder_out_dim + self.bn_dim


@dataclass(frozen=True, eq=False)
class Batch:
    """Feature rows with episode-local integer labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if f.ndim != 2 or f.shape[0] < 1:
            raise LayoutError(f"features must be a non-empty 2-D matrix, got {f.shape}")
        if y.shape != (f.shape[0],):
            raise LayoutError("labels must be one id per feature row")
        if (y < 0).any():
            raise LayoutError("labels must be non-negative")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    @property
    def rows(self):
        return self.features.shape[0]


@lru_cache(maxsize=None)
def plan_for(cfg: ModelConfig):
    return build_plan(cfg.input_dim, cfg.encoder_dims, cfg.bn_dim, cfg.head_dims, cfg.n_way)


@lru_cache(maxsize=None)
def build_layout(cfg: ModelConfig) -> Layout:
    """Named layout matching the kernel plan's canonical layer order."""
    plan = plan_for(cfg)
    entries = []
    n_aff = len(plan.layer_in)
    for i in range(n_aff):
        fi, fo = int(plan.layer_in[i]), int(plan.layer_out[i])
        if i < plan.n_enc:
            stem = f"enc{i}"
        elif i < n_aff - 1:
            stem = f"head{i - plan.n_enc}"
        else:
            stem = "out"
        entries.append((f"{stem}.W", (fi, fo)))
        entries.append((f"{stem}.b", (fo,)))
    return Layout(tuple(entries))


def init_params(cfg: ModelConfig, rng) -> ParamSet:
    """Glorot-normal weights, zero biases."""
    layout = build_layout(cfg)
    values = np.zeros(layout.total)
    for name, shape in layout.entries:
        if name.endswith(".W"):
            fi, fo = shape
            off, _ = layout.offsets[name]
            std = np.sqrt(2.0 / (fi + fo))
            values[off:off + fi * fo] = rng.normal(0.0, std, size=fi * fo)
    return ParamSet(layout, values)


def zero_params(cfg: ModelConfig) -> ParamSet:
    layout = build_layout(cfg)
    return ParamSet(layout, np.zeros(layout.total))


def forward(params: ParamSet, cfg: ModelConfig, batch: Batch):
    """Logits of shape (rows, n_way) plus the cache backward needs."""
    if batch.features.shape[1] != cfg.input_dim:
        raise LayoutError(
            f"batch has {batch.features.shape[1]} features, model expects {cfg.input_dim}"
        )
    if params.layout != build_layout(cfg):
        raise LayoutError("parameter layout does not match the model config")
    logits, cache = _kernels.active.forward(plan_for(cfg), params.values, batch.features)
    cache.layout = params.layout
    return logits, cache


def backward(cache, grad_logits) -> ParamSet:
    """Parameter gradient of the scalar loss whose logit gradient is grad_logits."""
    if cache.layout is None:
        raise LayoutError("cache did not come from numcore.forward")
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != (cache.n_rows, cache.plan.n_way):
        raise LayoutError(
            f"grad_logits shape {g.shape} does not match cached forward "
            f"({cache.n_rows}, {cache.plan.n_way})"
        )
    values = _kernels.backward_for(cache)(cache, g)
    return ParamSet(cache.layout, values)

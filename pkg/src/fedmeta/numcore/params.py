"""Flat parameter vectors with a named-shape layout.

A ParamSet is the unit moved between clients and the server: one contiguous
f64 array plus an ordered (name, shape) registry.  ParamSets are immutable
values; every optimizer or fusion step returns a new one.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import LayoutError, NumericsError


@dataclass(frozen=True)
class Layout:
    """Ordered (name, shape) registry for a flat parameter vector."""

    entries: tuple
    total: int = field(init=False, compare=False, repr=False)
    offsets: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        entries = tuple((str(n), tuple(int(d) for d in s)) for n, s in self.entries)
        object.__setattr__(self, "entries", entries)
        offsets = {}
        off = 0
        for name, shape in entries:
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            offsets[name] = (off, shape)
            off += size
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "total", off)

    def names(self):
        return [n for n, _ in self.entries]


@dataclass(frozen=True, eq=False)
class ParamSet:
    layout: Layout
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise LayoutError(f"ParamSet values must be 1-D, got shape {v.shape}")
        if v.shape[0] != self.layout.total:
            raise LayoutError(
                f"value count {v.shape[0]} does not match layout total {self.layout.total}"
            )
        if v is self.values and v.flags.writeable:
            v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def view(self, name):
        """Read-only shaped view of one named entry."""
        off, shape = self.layout.offsets[name]
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        return self.values[off:off + size].reshape(shape)

    def with_values(self, values):
        return ParamSet(self.layout, values)

    def allclose(self, other, rtol=0.0, atol=0.0):
        return self.layout == other.layout and np.allclose(
            self.values, other.values, rtol=rtol, atol=atol
        )


def check_same_layout(*param_sets):
    first = param_sets[0].layout
    for ps in param_sets[1:]:
        if ps.layout != first:
            raise LayoutError("parameter layouts differ; elementwise arithmetic undefined")
    return first


def lincomb(models, coeffs):
    """Unchecked linear combination (internal; coefficients may be any sign)."""
    layout = check_same_layout(*models)
    out = np.zeros(layout.total)
    for ps, w in zip(models, coeffs):
        out += float(w) * ps.values
    return ParamSet(layout, out)


def weighted_sum(models, weights):
    """Convex combination of parameter sets (fusion step).

    Weights must be non-negative and sum to 1 within 1e-9.
    """
    models = list(models)
    if not models:
        raise ValueError("weighted_sum needs at least one model")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(models),):
        raise ValueError(f"{len(models)} models but {weights.size} weights")
    if (weights < 0).any():
        raise ValueError("fusion weights must be non-negative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError(f"fusion weights sum to {weights.sum()!r}, expected 1")
    out = lincomb(models, weights)
    if not np.isfinite(out.values).all():
        raise NumericsError("non-finite values after fusion")
    return out

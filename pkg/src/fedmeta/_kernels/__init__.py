"""Kernel backends for the dense hot loops.

Two interchangeable implementations of the same three operations
(``forward``, ``backward``, ``adapt_eval``):

* ``cython`` — compiled extension, built by setup.py; preferred when present.
* ``python`` — pure-numpy fallback with identical semantics.

The active backend is chosen at import time.  Set ``FEDMETA_BACKEND`` to
``cython`` or ``python`` to force one (forcing an unavailable backend is an
import error).  ``backward`` dispatches on the cache's producing backend, so
mixed use stays consistent.
"""

import os

from . import _py

_BACKENDS = {_py.NAME: _py}

try:
    from . import _fast
    _BACKENDS[_fast.NAME] = _fast
except ImportError:
    _fast = None

_requested = os.environ.get("FEDMETA_BACKEND")
if _requested:
    if _requested not in _BACKENDS:
        raise ImportError(
            f"FEDMETA_BACKEND={_requested!r} but available backends are "
            f"{sorted(_BACKENDS)}"
        )
    active = _BACKENDS[_requested]
elif _fast is not None:
    active = _fast
else:
    active = _py

BACKEND_NAME = active.NAME


def available():
    """Importable backends by name."""
    return dict(_BACKENDS)


def get(name=None):
    if name is None:
        return active
    return _BACKENDS[name]


def backward_for(cache):
    """Backward implementation paired to the backend that produced *cache*."""
    return _BACKENDS[cache.backend].backward

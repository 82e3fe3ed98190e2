"""Deterministic RNG stream derivation.

Every random draw in the package comes from a generator derived here, keyed
by (master seed, stream tag, ...indices).  Streams never depend on execution
or scheduling order.
"""

import numpy as np

# Stream tags keep derived generators disjoint across purposes.
STREAM_INIT = 1      # model parameter initialization
STREAM_CLIENT = 2    # per-(client, round) local training
STREAM_EVAL = 3      # server-side gate evaluation episodes
STREAM_REPORT = 4    # final reporting episodes
STREAM_TRACE = 5     # training-trace evaluation episodes
STREAM_BASELINE = 6  # direct-baseline model initialization
STREAM_SHARD = 7     # hospital class sharding
STREAM_CURVE = 8     # fine-tuning-curve evaluation episodes


def derive_rng(*key: int) -> np.random.Generator:
    """Generator seeded from an integer key tuple (order-sensitive)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))

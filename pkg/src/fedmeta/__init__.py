"""Federated meta-learning simulator for few-shot disease prediction.

Subpackages
-----------
numcore    parameter containers, the two-branch base learner, optimizers
losses     cross-entropy, focal loss, and the accuracy-attention meta loss
metalearn  episodic training: task sampling, inner/outer loops, meta-test
fedsim     simulated federation: gating, dynamic-weight fusion, round logs
data       dataset ingestion, class splits, hospital shards, synthetic data
harness    CLI, experiment configs, variants, reports
"""

from ._kernels import BACKEND_NAME

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]

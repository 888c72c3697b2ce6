"""Stick-breaking variational Bayesian GRU sequence-to-sequence networks.

Library and CLI for gloss-to-text translation with variational weight
posteriors, stick-breaking sparsity priors, data-driven pruning and
bit-precision weight compression.
"""

__version__ = "0.1.0"

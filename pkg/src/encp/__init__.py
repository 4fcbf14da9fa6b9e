"""Finite-rank conditional expectation operators with finite-group symmetry priors.

Subpackages cover group representation machinery, a symmetric Gaussian-mixture
oracle, a minimal float64 MLP substrate, equivariant encoders, the bilinear
invariant-kernel model with its disentangled contrastive loss, downstream
estimators (regression, conditional probabilities, quantiles), evaluation
metrics, and an experiment CLI.
"""

__version__ = "0.1.0"

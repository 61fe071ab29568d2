"""Bayesian nonparametric subtyping of multi-state connectivity networks.

This package clusters subjects by their multi-state brain networks with a
Dirichlet process mixture over stochastic block models, selects the
discriminative block pairs, and fits everything by coordinate-ascent
variational inference.
"""

__version__ = "0.1.0"

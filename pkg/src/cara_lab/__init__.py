"""Covariate-adjusted response-adaptive two-arm trial designs.

Simulation of the covariate-adjusted doubly adaptive biased coin and its
special cases, GLM maximum likelihood per arm, and the limiting allocation
variance that the simulations are checked against.
"""

__version__ = "0.1.0"

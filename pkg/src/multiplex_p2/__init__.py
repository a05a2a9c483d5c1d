"""Bayesian multiplex p2 models for directed binary multiplex networks."""

__version__ = "0.1.0"

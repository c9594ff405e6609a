"""Stein and Edgeworth bounds for compensated Poisson integrals on balls."""

__version__ = "0.1.0"

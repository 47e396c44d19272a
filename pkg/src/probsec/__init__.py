"""Probabilistic real-time security management under corrective-control failure."""

__version__ = "0.1.0"

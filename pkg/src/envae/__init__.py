"""Likelihood-free VAEs trained with the energy score, plus diagnostics."""

__version__ = "0.1.0"

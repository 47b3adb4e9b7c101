"""Gross-exposure constrained portfolio risk minimization."""

__version__ = "0.1.0"

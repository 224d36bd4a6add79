"""Anytime-feasible model predictive control for constrained LTI systems."""

__version__ = "0.1.0"

"""Discrete approximations of optimal control for perturbed polyhedral sweeping processes."""

__version__ = "0.1.0"

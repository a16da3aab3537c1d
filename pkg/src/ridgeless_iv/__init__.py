"""Numerical lab for minimum-norm interpolation with endogenous covariates."""

__version__ = "0.1.0"

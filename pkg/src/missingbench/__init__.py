"""Missingness simulation, imputation and OLS evaluation for tabular data."""

__version__ = "0.1.0"

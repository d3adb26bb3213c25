"""Differential prototype networks for treatment-benefit prediction on tabular patient data."""

__version__ = "0.1.0"

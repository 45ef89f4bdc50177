"""Causally informed spatio-temporal GHI forecasting on numpy."""

__version__ = "0.1.0"

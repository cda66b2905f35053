"""Forecast-driven adaptive signal control on a simulated intersection."""

__version__ = "0.1.0"

"""Simulation and parameter estimation for a trapped Ca+ ion in a fibre cavity."""

__version__ = "0.1.0"

"""Least-squares Monte Carlo pricing of GMWB variable annuities."""
__version__ = "0.1.0"

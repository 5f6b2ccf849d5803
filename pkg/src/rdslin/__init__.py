"""Numerical linearization toolkit: evolution operators, Lyapunov spectra,
adapted norms, conjugacy construction and certification for nonautonomous,
random and stochastic systems on the half-line."""

__version__ = "0.1.0"

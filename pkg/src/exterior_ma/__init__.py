"""Exterior Dirichlet problem for Monge-Ampere equations with quadratic asymptotics."""

__version__ = "0.1.0"

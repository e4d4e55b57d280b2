"""Sim-to-real quadrotor propeller fault diagnosis with an uncertainty-gated ensemble."""

__version__ = "0.1.0"

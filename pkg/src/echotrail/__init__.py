"""Critic-gated exploration memory for GUI agents, with a simulated phone to run it on."""

__version__ = "0.1.0"

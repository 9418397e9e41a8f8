"""Ergodic inventory control.

Solves, certifies and simulates (s, S) policies for an inventory level that
follows a state-dependent diffusion under general ordering costs.
"""

__version__ = "0.1.0"

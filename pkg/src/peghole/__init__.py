"""Tactile SE(2) pose estimation for peg-in-hole insertion."""

__version__ = "0.1.0"

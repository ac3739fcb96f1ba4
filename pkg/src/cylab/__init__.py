"""Numerical laboratory for Calabi-Yau metrics on C^3 asymptotic to C x A2."""

__version__ = "0.1.0"

"""Homogenization toolkit for power-law flow in thin porous media."""

__version__ = "0.1.0"

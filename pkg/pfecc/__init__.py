"""Penalty cell-centered finite elements for 2D variable-viscosity Stokes flow."""

__version__ = "1.0.0"

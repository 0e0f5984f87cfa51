"""Robust min-max data-driven predictive control."""

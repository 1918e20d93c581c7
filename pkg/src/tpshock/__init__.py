"""Viscous shock stability workbench."""

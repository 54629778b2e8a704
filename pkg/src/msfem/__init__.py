"""Generalized multiscale solver for velocity-eliminated mixed Darcy flow."""

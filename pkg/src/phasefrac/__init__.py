"""Phase-field brittle fracture with a stabilized (L-scheme) staggered solver."""

__version__ = "0.1.0"

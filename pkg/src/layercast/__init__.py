"""Power allocation for layered broadcast coding with successive refinement."""

__version__ = "0.1.0"

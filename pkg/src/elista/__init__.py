"""ISTA/extragradient solvers and their unrolled networks for sparse coding."""

__version__ = "0.1.0"

"""Fast summation of Stokes kernels by prolate kernel splitting and DMK."""

__version__ = "0.1.0"

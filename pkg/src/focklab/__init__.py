"""Numerics for the weighted Fock spaces F^2_m and Toeplitz products T_u T_v*."""

__version__ = "0.1.0"

"""Computational skeleton of KAM theory for the completely resonant cubic NLS
on T^d: resonance graphs and normal forms for chosen tangential sites, integer
lattice cut geometry, Melnikov small-divisor analysis with measure estimation,
a truncated KAM iteration on a sparse Taylor-Fourier Hamiltonian algebra, and
cross-validation against direct pseudo-spectral NLS simulation."""

__version__ = "0.1.0"

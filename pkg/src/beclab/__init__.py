"""Numerical lab for 2D mean-field Bose gases: NLS/Hartree ground states,
exact diagonalization in Fock space, de Finetti checks and dynamics."""
from .fock import BACKEND, FockSector
from .spectral import BandScheme, Grid2D, OneBodyBasis, SpectralField, TrapPotential, build_basis
from .potentials import InteractionSpec, ScaledInteraction, make_interaction, scale
from .variational import (FlowConfig, MinimizationResult, classify_stability, gn_constant, minimize_hartree,
                          minimize_nls)

__version__ = "0.1.0"

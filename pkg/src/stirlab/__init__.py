"""Multispecies stirring process toolkit."""

from .lattice import Configuration, ProfileGrid, SimplexError, sample_product_multinomial
from .potentials import PotentialSet
from .process import EventLog, Path, SimParams, apply_exchange, bond_rate, simulate

__version__ = "0.1.0"

__all__ = [
    "Configuration",
    "EventLog",
    "Path",
    "PotentialSet",
    "ProfileGrid",
    "SimParams",
    "SimplexError",
    "apply_exchange",
    "bond_rate",
    "sample_product_multinomial",
    "simulate",
]

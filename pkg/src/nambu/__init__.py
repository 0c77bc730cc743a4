"""Nambu mechanics: order-3 skew tensors, ternary brackets, identity checks and flows."""
from nambu._backend import BACKEND
from nambu.bracket import (
    BivectorField, NambuSystem, PoissonOperator3, SymplecticForm3, VectorField,
    divergence, hamiltonian_vector_field, induced_operator, nambu_bracket,
)
from nambu.exprcalc import DomainError, ParseError, ScalarField, parse
from nambu.skewtensor import (
    COVARIANT, CONTRAVARIANT, InverseError, RankDeficientError, SkewTensor3,
    flat_rank, flatten, generalized_E, levi_civita, make_skew3, right_inverse,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BivectorField", "CONTRAVARIANT", "COVARIANT", "DomainError", "InverseError",
    "NambuSystem", "ParseError", "PoissonOperator3", "RankDeficientError", "ScalarField",
    "SkewTensor3", "SymplecticForm3", "VectorField", "divergence", "flat_rank", "flatten",
    "generalized_E", "hamiltonian_vector_field", "induced_operator", "levi_civita",
    "make_skew3", "nambu_bracket", "parse", "right_inverse",
]

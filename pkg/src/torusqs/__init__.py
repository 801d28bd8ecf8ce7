"""Quasi-state of functions on the 2-torus, on a triangulated periodic grid.

Two independent routes give the same number: a Reeb-graph formula
(cycle plus trees) and an integral of the topological measure of sublevel
sets.  See :mod:`torusqs.quasistate_engine`.
"""
from .quasistate_engine import (
    BCurve,
    QuasiStateReport,
    b_curve_reeb,
    b_curve_tau,
    evaluate_aarnes,
    evaluate_reeb,
    quasi_state,
    zeta,
)
from .reeb_graph import build_reeb, decompose
from .surface_topology import TopologyError, regularize, sublevel, tau
from .torus_field import (
    FieldError,
    LatticeSymplectomorphism,
    RegularValueError,
    TorusField,
    build_field,
    generate_field,
    integrate,
)

__version__ = "0.1.0"

__all__ = [
    "BCurve",
    "FieldError",
    "LatticeSymplectomorphism",
    "QuasiStateReport",
    "RegularValueError",
    "TopologyError",
    "TorusField",
    "b_curve_reeb",
    "b_curve_tau",
    "build_field",
    "build_reeb",
    "decompose",
    "evaluate_aarnes",
    "evaluate_reeb",
    "generate_field",
    "integrate",
    "quasi_state",
    "regularize",
    "sublevel",
    "tau",
    "zeta",
]

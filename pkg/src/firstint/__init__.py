"""Construct differential systems that conserve a prescribed set of first integrals."""

from .brackets import Coord, Fun, IntegralSet, bracket_star, poisson, s_n, s_zero
from .constructor import Case, FieldModel, FieldSample, build_field, classify, diagnose
from .errors import FirstIntError, MathError, ValidationError, VerificationFailure
from .expr import PhaseSpace, evaluate, gradient, parse, to_text
from .flow import ConservationReport, IntegratorConfig, Trajectory, integrate
from .scenarios import list_builtins, materialize

__all__ = [
    "Case",
    "ConservationReport",
    "Coord",
    "FieldModel",
    "FieldSample",
    "FirstIntError",
    "Fun",
    "IntegralSet",
    "IntegratorConfig",
    "MathError",
    "PhaseSpace",
    "Trajectory",
    "ValidationError",
    "VerificationFailure",
    "bracket_star",
    "build_field",
    "classify",
    "diagnose",
    "evaluate",
    "gradient",
    "integrate",
    "list_builtins",
    "materialize",
    "parse",
    "poisson",
    "s_n",
    "s_zero",
    "to_text",
]

"""Vector fields admitting a prescribed complete set of first integrals.

Given integrals f1..fN, a function H and a multiplier lambda, the field is

    x' = dH/dy
    y' = -dH/dx + c + lambda * w / |w|

where the correction ``c`` solves ``(df/dy) c = {H, f}`` so that the
canonical drift of every f along H is cancelled, and ``w`` (a row of
determinant-bracket cofactors) spans the kernel of ``df/dy`` when that
matrix is singular of corank one.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from . import brackets as br
from .brackets import IntegralSet
from .errors import DegenerateKernel, InconsistentDrift, SingularLocus, ValidationError
from .expr import Const, Expr

BACKENDS = ("cramer", "solve", "both")
DEPENDENT_MODES = ("stop", "lstsq")
DRIFT_TOL = 1e-8


class Case(str, enum.Enum):
    CASE_I = "CaseI"
    CASE_II = "CaseII"
    SINGULAR = "Singular"
    DEPENDENT = "Dependent"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Diagnosis:
    case: Case
    s0: float
    sn: float
    rank: int
    y_rank: int
    reason: str = ""
    cofactors: np.ndarray | None = None
    kernel_row: int = 0

    @property
    def kernel(self) -> np.ndarray | None:
        if self.cofactors is None or not self.kernel_row:
            return None
        return self.cofactors[self.kernel_row - 1].copy()


def diagnose(J: np.ndarray, det_tol: float = br.DET_TOL, rank_tol: float = br.RANK_TOL) -> Diagnosis:
    """Classify a point from the Jacobian of the integrals."""
    n = J.shape[0]
    s0 = br.jac_s_zero(J)
    sn = br.jac_s_n(J)
    if not br.is_zero_det(s0, J, det_tol):
        # df/dy nonsingular already implies the integrals are independent
        return Diagnosis(Case.CASE_I, s0, sn, n, n)
    rank = br.numerical_rank(J, rank_tol)
    if rank < n:
        return Diagnosis(Case.SINGULAR, s0, sn, rank, -1, f"integrals are dependent here (rank {rank} < {n})")
    y_rank = min(br.numerical_rank(J[:, n:], rank_tol), n - 1)
    if y_rank < n - 1:
        return Diagnosis(Case.SINGULAR, s0, sn, rank, y_rank, f"df/dy has corank {n - y_rank} >= 2")
    cof = br.jac_cofactors(J)
    row = br.kernel_row(J, cof)
    others = [J[a] for a in range(n) if a != row - 1]
    if br.is_zero_det(np.linalg.norm(cof[row - 1]), others, det_tol):
        return Diagnosis(Case.SINGULAR, s0, sn, rank, y_rank, "kernel direction of df/dy vanishes")
    return Diagnosis(Case.CASE_II, s0, sn, rank, y_rank, "", cof, row)


def classify(fs: IntegralSet, point, det_tol: float = br.DET_TOL, rank_tol: float = br.RANK_TOL) -> Case:
    return diagnose(fs.jacobian(point), det_tol, rank_tol).case


def _drift(J: np.ndarray, gH: np.ndarray) -> np.ndarray:
    n = J.shape[0]
    return J[:, :n] @ gH[n:] - J[:, n:] @ gH[:n]


def canonical_drift(fs: IntegralSet, H: Expr, point) -> np.ndarray:
    """Time derivative of each f along the canonical field of H, i.e. -{H, f}."""
    return _drift(fs.jacobian(point), fs.compile(H).grad(point))


def kernel_vector(fs: IntegralSet, point, det_tol: float = br.DET_TOL, rank_tol: float = br.RANK_TOL) -> np.ndarray:
    J = fs.jacobian(point)
    d = diagnose(J, det_tol, rank_tol)
    if d.case is Case.CASE_I:
        raise DegenerateKernel("df/dy is nonsingular here; there is no kernel direction")
    if d.case is Case.SINGULAR:
        raise DegenerateKernel(d.reason)
    return d.kernel


@dataclass(frozen=True, eq=False)
class FieldModel:
    fs: IntegralSet
    hamiltonian: Expr
    lam: Expr = Const(0.0)
    backend: str = "both"
    det_tol: float = br.DET_TOL
    rank_tol: float = br.RANK_TOL
    strict: bool = True
    dependent: str = "stop"

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValidationError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.dependent not in DEPENDENT_MODES:
            raise ValidationError(f"dependent must be one of {DEPENDENT_MODES}, got {self.dependent!r}")
        if not (self.det_tol > 0 and self.rank_tol > 0):
            raise ValidationError("thresholds must be positive")
        object.__setattr__(self, "_H", self.fs.compile(self.hamiltonian))
        object.__setattr__(self, "_lam", self.fs.compile(self.lam))

    @property
    def n(self) -> int:
        return self.fs.n

    def with_lambda(self, lam: Expr) -> "FieldModel":
        return dataclasses.replace(self, lam=lam)

    def with_backend(self, backend: str) -> "FieldModel":
        return dataclasses.replace(self, backend=backend)

    def velocity(self, point) -> np.ndarray:
        return build_field(self, point).velocity


@dataclass(frozen=True)
class FieldSample:
    point: np.ndarray
    velocity: np.ndarray
    case: Case
    s0: float
    sn: float
    correction: np.ndarray
    kernel: np.ndarray | None
    correction_residual: float
    backend_used: str
    backend_discrepancy: float | None = None

    def as_dict(self) -> dict:
        return {
            "point": self.point.tolist(),
            "velocity": self.velocity.tolist(),
            "case": self.case.value,
            "s0": self.s0,
            "sN": self.sn,
            "correction": self.correction.tolist(),
            "kernel": None if self.kernel is None else self.kernel.tolist(),
            "residual": self.correction_residual,
            "backend": self.backend_used,
            "backend_discrepancy": self.backend_discrepancy,
        }


def _residual(J: np.ndarray, gH: np.ndarray, c: np.ndarray, drift: np.ndarray) -> float:
    # per-integral residual relative to the magnitude of the summed products
    n = J.shape[0]
    Jx, Jy = J[:, :n], J[:, n:]
    r = Jy @ c + drift
    scale = np.abs(Jx) @ np.abs(gH[n:]) + np.abs(Jy) @ np.abs(gH[:n]) + np.abs(Jy) @ np.abs(c)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(scale > 0, np.abs(r) / np.where(scale > 0, scale, 1.0), np.abs(r))
    return float(rel.max())


def _rel_gap(a: np.ndarray, b: np.ndarray) -> float:
    size = max(np.abs(a).max(), np.abs(b).max())
    return float(np.abs(a - b).max() / size) if size > 0 else 0.0


def build_field(model: FieldModel, point) -> FieldSample:
    """Evaluate the constructed field and its diagnostics at ``point``."""
    p = np.asarray(point, dtype=float)
    fs = model.fs
    n = fs.n
    J = fs.jacobian(p)
    d = diagnose(J, model.det_tol, model.rank_tol)
    dependent = d.case is Case.SINGULAR and d.rank < n and model.dependent == "lstsq"
    if d.case is Case.SINGULAR and not dependent:
        raise SingularLocus(d.reason)
    gH = model._H.grad(p)
    drift = _drift(J, gH)
    target = -drift  # {H, f_alpha}
    Jy = J[:, n:]
    kernel = None
    discrepancy = None
    if d.case is Case.CASE_I:
        c_solve = c_cramer = None
        if model.backend in ("solve", "both"):
            c_solve = np.linalg.solve(Jy, target)
        if model.backend in ("cramer", "both"):
            c_cramer = (target @ br.jac_cofactors(J)) / d.s0
        if model.backend == "both":
            discrepancy = _rel_gap(c_cramer, c_solve)
        c = c_solve if c_solve is not None else c_cramer
        used = model.backend
        extra = 0.0
    elif dependent:
        # opt-in extension off the complete-set hypothesis: keep every f constant
        # with the min-norm correction when the drift is still consistent
        c = np.linalg.lstsq(Jy, target, rcond=model.rank_tol)[0]
        used = "solve"
        extra = 0.0
    else:
        c = np.linalg.lstsq(Jy, target, rcond=model.rank_tol)[0]
        used = "solve"
        kernel = d.kernel
        # the raw bracket is a product of N-1 gradients and grows polynomially with
        # the state, so lambda = const blows up; divide by a matching power of the
        # gradient sizes that does not depend on which cofactor row was picked
        scale = br.hadamard_scale(J) ** ((n - 1) / n)
        extra = model._lam.value(p) * (kernel / scale)
    residual = _residual(J, gH, c, drift)
    if (dependent or (d.case is Case.CASE_II and model.strict)) and residual > DRIFT_TOL:
        raise InconsistentDrift(
            f"canonical drift of H has a component outside the range of df/dy (residual {residual:.3g})"
        )
    velocity = np.concatenate([gH[n:], -gH[:n] + c + extra])
    case = Case.DEPENDENT if dependent else d.case
    return FieldSample(p.copy(), velocity, case, d.s0, d.sn, c, kernel, residual, used, discrepancy)


def lie_derivative(f: Expr, model: FieldModel, point) -> float:
    sample = build_field(model, point)
    return float(model.fs.compile(f).grad(point) @ sample.velocity)


def conservation_defects(model: FieldModel, point) -> np.ndarray:
    """|L_X f_alpha| / (1 + |grad f_alpha| |X|) for every integral of the model."""
    sample = build_field(model, point)
    J = model.fs.jacobian(point)
    v = sample.velocity
    return np.abs(J @ v) / (1.0 + np.linalg.norm(J, axis=1) * np.linalg.norm(v))

"""Integration of constructed fields with passive conservation monitoring.

Integral values are recorded at every accepted state and never projected
back; any conservation comes from the field itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constructor import FieldModel, build_field
from .errors import MathError, NonFinite, OrderUndetermined, SingularLocus, ValidationError

METHODS = ("rk4-fixed", "adaptive45")

# Dormand-Prince 5(4); the 5th-order solution is propagated (local extrapolation).
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = np.array(_A[6] + (0.0,))
_B4 = np.array((5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40))
_E = _B5 - _B4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "adaptive45"
    dt: float = 1e-2
    rtol: float = 1e-10
    atol: float = 1e-12
    t_end: float = 10.0
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValidationError("t_end must be positive and finite")
        if self.method == "rk4-fixed" and not self.dt > 0:
            raise ValidationError("dt must be positive for rk4-fixed")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValidationError("rtol and atol must be positive")
        if not self.max_steps >= 1:
            raise ValidationError("max_steps must be at least 1")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class IntegralDrift:
    name: str
    initial: float
    max_abs_drift: float
    max_rel_drift: float


@dataclass(frozen=True)
class ConservationReport:
    integrals: tuple[IntegralDrift, ...]
    steps: int
    rejected: int
    termination: str
    t_final: float = 0.0

    @property
    def max_rel_drift(self) -> float:
        return max((d.max_rel_drift for d in self.integrals), default=0.0)

    def as_dict(self) -> dict:
        return {
            "termination": self.termination,
            "steps": self.steps,
            "rejected": self.rejected,
            "integrals": [
                {
                    "name": d.name,
                    "initial": d.initial,
                    "max_abs_drift": d.max_abs_drift,
                    "max_rel_drift": d.max_rel_drift,
                }
                for d in self.integrals
            ],
        }


def conservation_report(
    traj: Trajectory, steps: int | None = None, rejected: int = 0, termination: str = "completed"
) -> ConservationReport:
    values = traj.values
    drifts = []
    for i, name in enumerate(traj.names):
        initial = float(values[0, i])
        abs_drift = float(np.abs(values[:, i] - initial).max())
        drifts.append(IntegralDrift(name, initial, abs_drift, abs_drift / (1.0 + abs(initial))))
    return ConservationReport(
        tuple(drifts),
        len(traj.times) - 1 if steps is None else steps,
        rejected,
        termination,
        float(traj.times[-1]),
    )


def _failure_reason(exc: MathError) -> str:
    if isinstance(exc, NonFinite):
        return "nonfinite"
    if isinstance(exc, SingularLocus):
        return "singular-locus"
    return "step-collapse"


class _Recorder:
    def __init__(self, model: FieldModel):
        self.model = model
        self.times: list[float] = []
        self.states: list[np.ndarray] = []
        self.values: list[np.ndarray] = []

    def add(self, t: float, y: np.ndarray):
        self.times.append(t)
        self.states.append(y.copy())
        self.values.append(self.model.fs.values(y))

    def trajectory(self) -> Trajectory:
        return Trajectory(
            np.array(self.times), np.array(self.states), np.array(self.values), tuple(self.model.fs.names)
        )


def _rk4(model: FieldModel, y0: np.ndarray, cfg: IntegratorConfig, rec: _Recorder) -> tuple[int, str]:
    f = model.velocity
    n_steps = max(1, math.ceil(cfg.t_end / cfg.dt - 1e-9))
    if n_steps > cfg.max_steps:
        return 0, "max-steps"
    y = y0
    t = 0.0
    for i in range(n_steps):
        h = cfg.dt if i < n_steps - 1 else cfg.t_end - t
        try:
            k1 = f(y)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(y_new).all():
                raise NonFinite("state overflowed")
            build_field(model, y_new)  # classify the accepted state
        except MathError as exc:
            return i, _failure_reason(exc)
        y = y_new
        t = cfg.t_end if i == n_steps - 1 else (i + 1) * cfg.dt
        rec.add(t, y)
    return n_steps, "completed"


def _initial_step(y: np.ndarray, k1: np.ndarray, t_end: float) -> float:
    d0 = np.abs(y).max()
    d1 = np.abs(k1).max()
    h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h, t_end)


def _adaptive(model: FieldModel, y0: np.ndarray, cfg: IntegratorConfig, rec: _Recorder) -> tuple[int, int, str]:
    f = model.velocity
    y = y0
    t = 0.0
    k1 = f(y)
    h = _initial_step(y, k1, cfg.t_end)
    h_min = 1e-14 * cfg.t_end
    steps = rejected = 0
    while t < cfg.t_end:
        if steps >= cfg.max_steps:
            return steps, rejected, "max-steps"
        last = t + h >= cfg.t_end * (1 - 1e-15)
        if last:
            h = cfg.t_end - t
        try:
            ks = [k1]
            for i in range(1, 7):
                incr = sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
                ks.append(f(y + h * incr))
            y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
            if not np.isfinite(y_new).all():
                raise NonFinite("state overflowed")
        except MathError as exc:
            rejected += 1
            h *= 0.25
            if h < h_min:
                return steps, rejected, _failure_reason(exc)
            continue
        err_vec = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
        tol = cfg.atol + cfg.rtol * max(np.abs(y).max(), np.abs(y_new).max())
        ratio = np.abs(err_vec).max() / tol
        if ratio <= 1.0:
            t = cfg.t_end if last else t + h
            y = y_new
            k1 = ks[6]
            steps += 1
            rec.add(t, y)
            factor = MAX_FACTOR if ratio == 0.0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * ratio ** -0.2))
        else:
            rejected += 1
            factor = min(1.0, max(MIN_FACTOR, SAFETY * ratio ** -0.2))
        h *= factor
        if h < h_min and t < cfg.t_end:
            return steps, rejected, "step-collapse"
    return steps, rejected, "completed"


def integrate(model: FieldModel, start, cfg: IntegratorConfig) -> tuple[Trajectory, ConservationReport]:
    """Integrate the constructed field from ``start`` to ``cfg.t_end``.

    Runs never raise on numerical trouble past the first evaluation; the
    report's ``termination`` says why a run stopped early.
    """
    y0 = np.array(start, dtype=float)
    if y0.shape != (model.fs.space.dim,):
        raise ValidationError(f"start point must have {model.fs.space.dim} coordinates")
    build_field(model, y0)
    rec = _Recorder(model)
    rec.add(0.0, y0)
    if cfg.method == "rk4-fixed":
        steps, reason = _rk4(model, y0, cfg, rec)
        rejected = 0
    else:
        steps, rejected, reason = _adaptive(model, y0, cfg, rec)
    traj = rec.trajectory()
    return traj, conservation_report(traj, steps, rejected, reason)


def convergence_order(model: FieldModel, start, dt: float, t_end: float) -> float:
    """Empirical RK4 order by step halving against a dt/8 reference.

    Raises OrderUndetermined when any run stops early or the errors are not
    in the asymptotic regime.
    """
    finals = []
    for step in (dt, dt / 2, dt / 8):
        traj, report = integrate(model, start, IntegratorConfig("rk4-fixed", dt=step, t_end=t_end))
        if report.termination != "completed":
            raise OrderUndetermined(f"run with dt={step:g} stopped early: {report.termination}")
        finals.append(traj.final)
    e1 = np.linalg.norm(finals[0] - finals[2])
    e2 = np.linalg.norm(finals[1] - finals[2])
    scale = 1.0 + np.linalg.norm(finals[2])
    if not (e2 > 0 and e1 > e2) or e1 > 1e-2 * scale:
        raise OrderUndetermined(f"errors {e1:.3g}, {e2:.3g} are not in the asymptotic regime")
    return float(math.log2(e1 / e2))

"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 invalid input, 3 mathematical failure,
4 verification failure.  Artifacts are written only when a command succeeds,
each through a temporary file that is renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import brackets as br
from .brackets import IntegralSet
from .constructor import BACKENDS, FieldModel, build_field, conservation_defects, diagnose
from .errors import FirstIntError, MathError, RankDeficient, ValidationError, VerificationFailure
from .expr import PhaseSpace, parse
from .flow import METHODS, IntegratorConfig, Trajectory, integrate
from .scenarios import list_builtins, materialize, spec

LIE_TOL = 1e-8
_FILE_KEYS = {"n", "params", "builtin", "builtin_params", "integrals", "hamiltonian", "lambda", "initial",
              "integrator", "backend", "dependent"}
_INTEGRATOR_KEYS = {"method", "dt", "rtol", "atol", "t_end", "max_steps"}


class UsageError(FirstIntError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- scenario files


@dataclass(frozen=True)
class LoadedScenario:
    fs: IntegralSet
    model: FieldModel
    initial: np.ndarray
    integrator: IntegratorConfig
    regular: object = None


def _number_list(value, what: str) -> list[float]:
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ValidationError(f"{what} must be an array of numbers")
    out = [float(v) for v in value]
    if not all(math.isfinite(v) for v in out):
        raise ValidationError(f"{what} must contain finite numbers only")
    return out


def _integrator(doc) -> IntegratorConfig:
    if doc is None:
        return IntegratorConfig()
    if not isinstance(doc, dict):
        raise ValidationError('"integrator" must be an object')
    unknown = set(doc) - _INTEGRATOR_KEYS
    if unknown:
        raise ValidationError(f"unknown integrator key(s): {', '.join(sorted(unknown))}")
    try:
        return IntegratorConfig(**doc)
    except TypeError as exc:
        raise ValidationError(f"bad integrator settings: {exc}") from None


def load_scenario(doc: dict) -> LoadedScenario:
    """Build the model described by a scenario document."""
    if not isinstance(doc, dict):
        raise ValidationError("scenario file must hold a JSON object")
    unknown = set(doc) - _FILE_KEYS
    if unknown:
        raise ValidationError(f"unknown scenario key(s): {', '.join(sorted(unknown))}")
    if ("builtin" in doc) == ("integrals" in doc):
        raise ValidationError('exactly one of "builtin" and "integrals" is required')
    backend = doc.get("backend", "both")
    if backend not in BACKENDS:
        raise ValidationError(f"backend must be one of {BACKENDS}, got {backend!r}")

    if "builtin" in doc:
        for key in ("hamiltonian", "params"):
            if key in doc:
                raise ValidationError(f'"{key}" cannot be combined with "builtin"')
        sc = materialize(doc["builtin"], doc.get("builtin_params") or {})
        if "n" in doc and doc["n"] != sc.n:
            raise ValidationError(f'"n" is {doc["n"]} but builtin {sc.name} has n = {sc.n}')
        fs, H, lam, initial, regular = sc.fs, sc.hamiltonian, sc.lam, sc.initial, sc.regular
        if "lambda" in doc:
            lam = sc.parse(_text(doc["lambda"], "lambda"))
    else:
        n = doc.get("n")
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise ValidationError('"n" must be a positive integer')
        params = doc.get("params") or {}
        if not isinstance(params, dict):
            raise ValidationError('"params" must be an object')
        bindings = dict(zip(params, _number_list(list(params.values()), '"params" values')))
        texts = doc["integrals"]
        if not isinstance(texts, list) or len(texts) != n:
            raise ValidationError(f'"integrals" must be an array of {n} expression strings')
        space = PhaseSpace(n)
        exprs = tuple(_parse_field(_text(t, f"integrals[{i}]"), space, bindings, f"integrals[{i}]")
                      for i, t in enumerate(texts))
        fs = IntegralSet(space, exprs, bindings)
        if "hamiltonian" not in doc:
            raise ValidationError('"hamiltonian" is required with explicit integrals')
        H = _parse_field(_text(doc["hamiltonian"], "hamiltonian"), space, bindings, "hamiltonian")
        lam = _parse_field(_text(doc.get("lambda", "0"), "lambda"), space, bindings, "lambda")
        if "initial" not in doc:
            raise ValidationError('"initial" is required with explicit integrals')
        initial, regular = None, None

    if "initial" in doc:
        initial = np.array(_number_list(doc["initial"], '"initial"'))
    if len(initial) != fs.space.dim:
        raise ValidationError(f'"initial" must have {fs.space.dim} entries, got {len(initial)}')
    model = FieldModel(fs, H, lam, backend, dependent=doc.get("dependent", "stop"))
    return LoadedScenario(fs, model, np.asarray(initial, dtype=float), _integrator(doc.get("integrator")), regular)


def _text(value, what: str) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{what} must be a string")
    return value


def _parse_field(text: str, space, bindings, what: str):
    try:
        return parse(text, space, bindings)
    except ValidationError as exc:
        raise ValidationError(f"{what}: {exc}") from exc


def read_scenario_file(path: str) -> LoadedScenario:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return load_scenario(doc)


def parse_point(text: str, dim: int) -> np.ndarray:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValidationError(f"--point must be {dim} comma-separated numbers") from None
    if len(values) != dim or not all(math.isfinite(v) for v in values):
        raise ValidationError(f"--point must be {dim} finite comma-separated numbers, got {len(values)}")
    return np.array(values)


# ---------------------------------------------------------------- artifacts


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def trajectory_csv(traj: Trajectory) -> str:
    n = traj.n
    header = ["t"] + [f"x{k}" for k in range(1, n + 1)] + [f"y{k}" for k in range(1, n + 1)]
    header += [f"f{k}" for k in range(1, len(traj.names) + 1)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for t, y, f in zip(traj.times, traj.states, traj.values):
        writer.writerow([_fmt(t)] + [_fmt(v) for v in y] + [_fmt(v) for v in f])
    return buf.getvalue()


def read_trajectory(path: str, names: Sequence[str] | None = None) -> Trajectory:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    n = sum(1 for h in header if h.startswith("x"))
    names = tuple(names) if names else tuple(h for h in header if h.startswith("f"))
    return Trajectory(body[:, 0], body[:, 1 : 2 * n + 1], body[:, 2 * n + 1 :], names)


def report_json(report) -> str:
    return json.dumps(report.as_dict(), indent=2) + "\n"


def write_atomic(path: str, text: str):
    target = Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent or ".", prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- subcommands


def _point(args, sc: LoadedScenario) -> np.ndarray:
    return sc.initial if args.point is None else parse_point(args.point, sc.fs.space.dim)


def _emit(obj):
    print(json.dumps(obj, indent=2))


def _sample_points(sc: LoadedScenario, center: np.ndarray, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    # perturbations of the reference point keep samples inside the domain of the integrals
    out = []
    scale = 0.1 * (1.0 + np.abs(center))
    while len(out) < k:
        p = center + rng.uniform(-1.0, 1.0, center.shape) * scale
        if sc.regular is None or sc.regular(p):
            out.append(p)
    return out


def cmd_check(args) -> int:
    sc = read_scenario_file(args.file)
    p = _point(args, sc)
    J = sc.fs.jacobian(p)
    rank = br.numerical_rank(J, sc.model.rank_tol)
    if rank < sc.fs.n:
        raise RankDeficient(f"integrals are rank deficient at the point: rank {rank} < {sc.fs.n}")
    d = diagnose(J, sc.model.det_tol, sc.model.rank_tol)
    rng = np.random.default_rng(args.seed)
    points = [p] + _sample_points(sc, p, args.samples, rng)
    rows = []
    worst = 0.0
    for i, q in enumerate(points):
        try:
            defects = conservation_defects(sc.model, q)
        except MathError as exc:
            if i == 0:
                raise
            rows.append({"sample": i, "skipped": str(exc)})
            continue
        worst = max(worst, float(defects.max()))
        rows.append({"sample": i, "max_defect": float(defects.max())})
    result = {
        "rank": rank,
        "involution": br.involution_matrix(sc.fs, p).tolist(),
        "involution_scale": br.involution_scale(J),
        "s0": d.s0,
        "sN": d.sn,
        "case": d.case.value,
        "lie_tolerance": LIE_TOL,
        "max_defect": worst,
        "samples": rows,
    }
    _emit(result)
    if worst > LIE_TOL:
        raise VerificationFailure(f"Lie derivative defect {worst:.3g} exceeds {LIE_TOL:g}")
    return 0


def cmd_field(args) -> int:
    sc = read_scenario_file(args.file)
    model = sc.model if args.backend is None else sc.model.with_backend(args.backend)
    _emit(build_field(model, parse_point(args.point, sc.fs.space.dim)).as_dict())
    return 0


def cmd_brackets(args) -> int:
    sc = read_scenario_file(args.file)
    p = parse_point(args.point, sc.fs.space.dim)
    J = sc.fs.jacobian(p)
    d = diagnose(J, sc.model.det_tol, sc.model.rank_tol)
    _emit(
        {
            "poisson": br.involution_matrix(sc.fs, p).tolist(),
            "s0": d.s0,
            "sN": d.sn,
            "cofactors": br.jac_cofactors(J).tolist(),
            "rank": br.numerical_rank(J, sc.model.rank_tol),
            "case": d.case.value,
        }
    )
    return 0


def cmd_integrate(args) -> int:
    sc = read_scenario_file(args.file)
    cfg = sc.integrator
    overrides = {k: v for k, v in (("method", args.method), ("t_end", args.t_end), ("dt", args.dt)) if v is not None}
    if overrides:
        cfg = IntegratorConfig(**{**cfg.__dict__, **overrides})
    traj, report = integrate(sc.model, sc.initial, cfg)
    text = report_json(report)
    if report.termination != "completed":
        sys.stdout.write(text)
        raise MathError(f"integration stopped at t = {report.t_final:.6g}: {report.termination}")
    if args.max_drift is not None and report.max_rel_drift > args.max_drift:
        sys.stdout.write(text)
        raise VerificationFailure(f"relative drift {report.max_rel_drift:.3g} exceeds {args.max_drift:g}")
    if args.out:
        write_atomic(args.out, trajectory_csv(traj))
    if args.report:
        write_atomic(args.report, text)
    sys.stdout.write(text)
    return 0


def cmd_scenarios(args) -> int:
    for s in list_builtins():
        print(f"{s.name:10s} {s.family:10s} {s.summary}")
    return 0


def cmd_scenario_show(args) -> int:
    _emit(spec(args.name).schema())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="firstint", description="Vector fields with prescribed first integrals.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="independence, involution, regularity and conservation checks")
    p.add_argument("file")
    p.add_argument("--point")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("field", help="evaluate the constructed field at a point")
    p.add_argument("file")
    p.add_argument("--point", required=True)
    p.add_argument("--backend", choices=BACKENDS)
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("brackets", help="Poisson matrix and regularity determinants at a point")
    p.add_argument("file")
    p.add_argument("--point", required=True)
    p.set_defaults(func=cmd_brackets)

    p = sub.add_parser("integrate", help="integrate the field and report conservation")
    p.add_argument("file")
    p.add_argument("--out", help="trajectory CSV")
    p.add_argument("--report", help="report JSON")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--max-drift", type=float, help="exit 4 if any relative drift exceeds this")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("scenarios", help="list builtin scenarios")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("scenario", help="builtin scenario details")
    show = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    s = show.add_parser("show")
    s.add_argument("name")
    s.set_defaults(func=cmd_scenario_show)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "samples", 0) < 0:
            raise UsageError("--samples must be non-negative")
        return args.func(args)
    except FirstIntError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

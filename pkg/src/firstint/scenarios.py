"""Built-in integral families.

=========  ====================================================================
example1   three particles with inverse-cube forces; f = (H, sum x*y, sum y)
kepler-m   Kepler angular momentum M = x cross y
kepler-w   Kepler Runge-Lenz vector W = y cross M - mu x / |x| (attractive, x'' = -mu x/|x|^3)
vortex3    three point vortices, canonically rescaled u = sqrt(G) x, v = sqrt(G) y
uhlenbeck  Uhlenbeck integrals; B = 0 gives the Neumann system on the sphere
=========  ====================================================================

Every scenario is generated as expression *text* and parsed, so the parser
is exercised on every builtin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .brackets import MAX_N, IntegralSet
from .constructor import FieldModel
from .errors import ParameterViolation, UnknownScenario
from .expr import Expr, PhaseSpace, parse


@dataclass(frozen=True)
class ParamSpec:
    name: str
    default: Any
    constraint: str
    kind: str = "float"


@dataclass(frozen=True, eq=False)
class Scenario:
    """A materialized builtin: integrals, Hamiltonian, multiplier, start point."""

    name: str
    params: Mapping[str, Any]
    fs: IntegralSet
    hamiltonian: Expr
    lam: Expr
    initial: np.ndarray
    extras: Mapping[str, Expr] = field(default_factory=dict)
    identities: tuple[str, ...] = ()
    regular: Callable[[np.ndarray], bool] = lambda p: True

    @property
    def n(self) -> int:
        return self.fs.n

    @property
    def space(self) -> PhaseSpace:
        return self.fs.space

    def parse(self, text: str) -> Expr:
        return parse(text, self.space, self.fs.bindings)

    def model(self, backend: str = "both", lam: Expr | str | None = None, **kwargs) -> FieldModel:
        if isinstance(lam, str):
            lam = self.parse(lam)
        return FieldModel(self.fs, self.hamiltonian, self.lam if lam is None else lam, backend, **kwargs)

    def expressions(self) -> dict[str, Expr]:
        out = dict(zip(self.fs.names, self.fs.exprs))
        out["H"] = self.hamiltonian
        out["lambda"] = self.lam
        out.update(self.extras)
        return out

    def sample_point(self, rng: np.random.Generator, box: float = 1.0, attempts: int = 10_000) -> np.ndarray:
        """Uniform point in [-box, box]^{2N} passing the scenario's regularity filter."""
        for _ in range(attempts):
            p = rng.uniform(-box, box, self.space.dim)
            if self.regular(p):
                return p
        raise RuntimeError(f"could not sample a regular point for {self.name}")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    family: str
    summary: str
    params: tuple[ParamSpec, ...]
    build: Callable[[dict], Scenario] = field(repr=False)

    def schema(self) -> dict:
        return {
            "name": self.name,
            "family": self.family,
            "summary": self.summary,
            "params": [
                {"name": p.name, "default": p.default, "constraint": p.constraint, "kind": p.kind} for p in self.params
            ],
        }


# ---------------------------------------------------------------- helpers


def _sum(terms: Sequence[str]) -> str:
    return " + ".join(terms)


def _dot(a: str, b: str, n: int) -> str:
    return "(" + _sum([f"{a}{k}*{b}{k}" for k in range(1, n + 1)]) + ")"


def _positive(params: dict, names: Sequence[str]):
    for name in names:
        if not params[name] > 0:
            raise ParameterViolation(f"{name} must be positive, got {params[name]}")


def _integral_set(n: int, texts: Sequence[str], bindings: dict, names=()) -> tuple[IntegralSet, PhaseSpace]:
    fs = IntegralSet.from_text(n, texts, bindings, names)
    return fs, fs.space


# ---------------------------------------------------------------- example1


def _example1(params: dict) -> Scenario:
    _positive(params, ["m1", "m2", "m3"])
    H = (
        "y1^2/(2*m1) + y2^2/(2*m2) + y3^2/(2*m3)"
        " + a/(x1 - x2)^2 + b/(x3 - x1)^2 + c/(x3 - x2)^2"
    )
    bindings = {k: float(params[k]) for k in ("m1", "m2", "m3", "a", "b", "c")}
    fs, space = _integral_set(3, [H, "x1*y1 + x2*y2 + x3*y3", "y1 + y2 + y3"], bindings)

    def regular(p):
        x = p[:3]
        return min(abs(x[0] - x[1]), abs(x[2] - x[0]), abs(x[2] - x[1])) > 0.2

    return Scenario(
        "example1",
        params,
        fs,
        fs.exprs[0],
        parse("0", space),
        np.array([-1.0, 0.1, 1.2, -0.3, 0.1, 0.2]),
        {"s0_closed": parse("(x2 - x1)*y3/m3 + (x1 - x3)*y2/m2 + (x3 - x2)*y1/m1", space, bindings)},
        (
            "{f1,f2} = -2 f1 and {f3,f2} = -f3 (printed: 2 f1, -f3)",
            "{f1,f3} = 0",
            "s0 = (x2-x1) y3/m3 + (x1-x3) y2/m2 + (x3-x2) y1/m1",
            "correction = 2H/s0 * (y3/m3 - y2/m2, y1/m1 - y3/m3, y2/m2 - y1/m1)",
        ),
        regular,
    )


# ---------------------------------------------------------------- kepler

_M = ("x2*y3 - x3*y2", "x3*y1 - x1*y3", "x1*y2 - x2*y1")
_R = "sqrt(x1^2 + x2^2 + x3^2)"


def _kepler_m(params: dict) -> Scenario:
    fs, space = _integral_set(3, list(_M), {}, ("M1", "M2", "M3"))

    def regular(p):
        x, y = p[:3], p[3:]
        return np.linalg.norm(np.cross(x, y)) > 0.1 * np.linalg.norm(x) * np.linalg.norm(y)

    return Scenario(
        "kepler-m",
        params,
        fs,
        parse("(y1^2 + y2^2 + y3^2)/2", space),
        parse("0", space),
        np.array([1.0, 0.2, -0.3, 0.4, 1.0, 0.1]),
        {},
        ("s0 = 0 identically", "|sN| = |x1 M3|", "{M1,M2} = M3 cyclically", "kernel direction ∝ x"),
        regular,
    )


def _kepler_w(params: dict) -> Scenario:
    _positive(params, ["mu"])
    bindings = {"mu": float(params["mu"])}
    yy = _dot("y", "y", 3)
    xy = _dot("x", "y", 3)
    texts = [f"x{j}*{yy} - {xy}*y{j} - mu*x{j}/{_R}" for j in (1, 2, 3)]
    fs, space = _integral_set(3, texts, bindings, ("W1", "W2", "W3"))
    m_sq = _sum([f"({m})^2" for m in _M])
    extras = {
        "F": parse(f"({_dot('x', 'x', 3)}*{yy} - {xy}^2)/2 - mu*{_R}", space, bindings),
        "s0_closed": parse(f"2*{xy}*({m_sq})", space, bindings),
    }

    def regular(p):
        x, y = p[:3], p[3:]
        nx, ny = np.linalg.norm(x), np.linalg.norm(y)
        return (
            nx > 0.3
            and abs(x @ y) > 0.1 * nx * ny
            and np.linalg.norm(np.cross(x, y)) > 0.1 * nx * ny
        )

    return Scenario(
        "kepler-w",
        params,
        fs,
        parse("(y1^2 + y2^2 + y3^2)/2", space),
        parse("0", space),
        np.array([1.0, 0.2, -0.3, 0.4, 1.0, 0.1]),
        extras,
        ("s0 = ±2<x,y>|M|^2", "field = (y, -x/|x|^3) for H = |y|^2/2", "W_j = dF/dx_j, F = (|x|^2|y|^2 - <x,y>^2)/2 - mu|x|"),
        regular,
    )


# ---------------------------------------------------------------- vortex3


def _vortex3(params: dict) -> Scenario:
    _positive(params, ["g1", "g2", "g3"])
    bindings = {k: float(params[k]) for k in ("g1", "g2", "g3")}
    texts = [
        "sqrt(g1)*x1 + sqrt(g2)*x2 + sqrt(g3)*x3",
        "sqrt(g1)*y1 + sqrt(g2)*y2 + sqrt(g3)*y3",
        "(x1^2 + x2^2 + x3^2 + y1^2 + y2^2 + y3^2)/2",
    ]
    fs, space = _integral_set(3, texts, bindings)
    # sum over ordered pairs m != k of G_m G_k log(distance) = sum over m < k of G_m G_k log(distance^2)
    pairs = []
    for m, k in ((1, 2), (1, 3), (2, 3)):
        dx = f"(x{k}/sqrt(g{k}) - x{m}/sqrt(g{m}))"
        dy = f"(y{k}/sqrt(g{k}) - y{m}/sqrt(g{m}))"
        pairs.append(f"g{m}*g{k}*log({dx}^2 + {dy}^2)")
    H = parse(_sum(pairs), space, bindings)
    g = np.sqrt([bindings["g1"], bindings["g2"], bindings["g3"]])

    def regular(p):
        x, y = p[:3] / g, p[3:] / g
        dist = [math.hypot(x[i] - x[j], y[i] - y[j]) for i, j in ((0, 1), (0, 2), (1, 2))]
        return min(dist) > 0.2

    # well separated vortices; closer starts rotate fast and need many more steps
    start_x = np.array([2.0, -1.0, 0.0])
    start_y = np.array([0.0, 0.8, -1.6])
    return Scenario(
        "vortex3",
        params,
        fs,
        H,
        parse("0", space),
        np.concatenate([start_x * g, start_y * g]),
        {},
        (
            "s0 = 0 identically (f1 does not depend on y)",
            "canonical drift of every integral along the vortex Hamiltonian vanishes",
            "kernel direction ∝ sqrt(G) cross v",
        ),
        regular,
    )


# ---------------------------------------------------------------- uhlenbeck


def uhlenbeck_texts(n: int) -> list[str]:
    texts = []
    for nu in range(1, n + 1):
        terms = [f"(A*x{nu} + B*y{nu})^2"]
        for j in range(1, n + 1):
            if j != nu:
                terms.append(f"(x{nu}*y{j} - x{j}*y{nu})^2/(a{nu} - a{j})")
        texts.append(_sum(terms))
    return texts


def _uhlenbeck(params: dict) -> Scenario:
    n = params["n"]
    if not isinstance(n, int) or isinstance(n, bool) or not 2 <= n <= MAX_N:
        raise ParameterViolation(f"n must be an integer in 2..{MAX_N}, got {n!r}")
    a = params["a"]
    if a is None:
        a = list(range(1, n + 1))
    a = [float(v) for v in a]
    if len(a) != n:
        raise ParameterViolation(f"a must have {n} entries, got {len(a)}")
    if any(a[i] >= a[i + 1] for i in range(n - 1)):
        raise ParameterViolation(f"a must be strictly increasing, got {a}")
    params = dict(params, a=a)
    bindings = {"A": float(params["A"]), "B": float(params["B"])}
    bindings.update({f"a{k}": a[k - 1] for k in range(1, n + 1)})
    texts = uhlenbeck_texts(n)
    fs, space = _integral_set(n, texts, bindings)
    H = parse("(" + _sum([f"a{k}*({t})" for k, t in enumerate(texts, 1)]) + ")/2", space, bindings)
    lin = [f"(A*x{k} + B*y{k})^2" for k in range(1, n + 1)]
    xx, yy, xy = _dot("x", "x", n), _dot("y", "y", n), _dot("y", "x", n)
    extras = {
        "sum_f_closed": parse(_sum(lin), space, bindings),
        "sum_af_closed": parse(
            _sum([f"a{k}*{t}" for k, t in enumerate(lin, 1)]) + f" + {xx}*{yy} - {xy}^2", space, bindings
        ),
        "radius_sq": parse(xx, space, bindings),
    }
    initial = np.array(
        [round(math.sin(1.7 * k + 0.3), 3) for k in range(1, n + 1)]
        + [round(math.cos(2.3 * k + 0.5), 3) for k in range(1, n + 1)]
    )
    return Scenario(
        "uhlenbeck",
        params,
        fs,
        H,
        parse("0", space),
        initial,
        extras,
        (
            "{f_i, f_j} = 0 for all i, j",
            "sum f = sum (A x + B y)^2",
            "sum a f = sum a (A x + B y)^2 + |x|^2|y|^2 - <x,y>^2",
            "s0 != 0 iff B != 0",
            "B = 0: kernel direction ∝ x, motion stays on the sphere |x| = const",
        ),
    )


# ---------------------------------------------------------------- registry

_REGISTRY: Mapping[str, ScenarioSpec] = MappingProxyType(
    {
        "example1": ScenarioSpec(
            "example1",
            "three-body",
            "three particles, inverse-cube forces; f = (H, sum x_i y_i, sum y_i)",
            (
                ParamSpec("m1", 1.0, "> 0"),
                ParamSpec("m2", 2.0, "> 0"),
                ParamSpec("m3", 3.0, "> 0"),
                ParamSpec("a", 1.0, "real"),
                ParamSpec("b", 1.0, "real"),
                ParamSpec("c", 1.0, "real"),
            ),
            _example1,
        ),
        "kepler-m": ScenarioSpec(
            "kepler-m", "kepler", "Kepler angular momentum M = x × y (case ii, geodesic flow)", (), _kepler_m
        ),
        "kepler-w": ScenarioSpec(
            "kepler-w",
            "kepler",
            "Kepler Runge-Lenz vector W = y × M - mu x/|x| (case i)",
            (ParamSpec("mu", 1.0, "> 0"),),
            _kepler_w,
        ),
        "vortex3": ScenarioSpec(
            "vortex3",
            "vortex",
            "three point vortices in rescaled canonical coordinates",
            (ParamSpec("g1", 1.0, "> 0"), ParamSpec("g2", 2.0, "> 0"), ParamSpec("g3", 3.0, "> 0")),
            _vortex3,
        ),
        "uhlenbeck": ScenarioSpec(
            "uhlenbeck",
            "uhlenbeck",
            "Uhlenbeck integrals; B = 0 is the Neumann system",
            (
                ParamSpec("n", 3, "integer, 2 <= n <= 16", "int"),
                ParamSpec("A", 1.0, "real"),
                ParamSpec("B", 0.0, "real"),
                ParamSpec("a", None, "n strictly increasing reals (default 1..n)", "vector"),
            ),
            _uhlenbeck,
        ),
    }
)


def list_builtins() -> list[ScenarioSpec]:
    return list(_REGISTRY.values())


def spec(name: str) -> ScenarioSpec:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownScenario(f"unknown scenario {name!r}; known: {', '.join(_REGISTRY)}") from None


def _coerce(p: ParamSpec, value):
    if p.kind == "int":
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        return value
    if p.kind == "vector":
        if value is None:
            return None
        if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
            raise ParameterViolation(f"{p.name} must be a list of numbers")
        return [float(v) for v in value]
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ParameterViolation(f"{p.name} must be a number, got {value!r}") from None
    if not math.isfinite(value):
        raise ParameterViolation(f"{p.name} must be finite")
    return value


def materialize(name: str, params: Mapping[str, Any] | None = None) -> Scenario:
    """Instantiate a builtin with ``params`` overriding the defaults."""
    entry = spec(name)
    params = dict(params or {})
    known = {p.name for p in entry.params}
    unknown = set(params) - known
    if unknown:
        raise ParameterViolation(f"unknown parameter(s) for {name}: {', '.join(sorted(unknown))}")
    values = {p.name: _coerce(p, params.get(p.name, p.default)) for p in entry.params}
    return entry.build(values)

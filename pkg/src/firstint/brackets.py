"""Determinant brackets, Poisson brackets and regularity quantities.

The determinant bracket ``{h1, ..., h2N}*`` is the determinant of the
2N x 2N matrix whose rows are the gradients of the ``h``.  A slot is either
a function (:class:`Fun`) or a coordinate (:class:`Coord`); coordinate rows
are unit vectors and are eliminated exactly before any floating-point work,
so e.g. ``{f1..fN, x1..xN}* = (-1)^N det(df/dy)`` holds with no roundoff in
the sign or the reduction.

Poisson bracket convention::

    {a, b} = sum_j (da/dx_j db/dy_j - da/dy_j db/dx_j)
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import ValidationError
from .expr import CompiledExpr, Expr, PhaseSpace, parse

MAX_N = 16
DET_TOL = 1e-9
RANK_TOL = 1e-10


@dataclass(frozen=True)
class Fun:
    expr: Expr


@dataclass(frozen=True)
class Coord:
    index: int


Slot = Union[Fun, Coord]


@dataclass(frozen=True, eq=False)
class IntegralSet:
    """N candidate first integrals on R^{2N} with bound parameters."""

    space: PhaseSpace
    exprs: tuple[Expr, ...]
    bindings: Mapping[str, float] = field(default_factory=dict)
    names: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.space.n
        if n > MAX_N:
            raise ValidationError(f"at most {MAX_N} degrees of freedom are supported, got {n}")
        if len(self.exprs) != n:
            raise ValidationError(f"expected {n} integrals for N={n}, got {len(self.exprs)}")
        object.__setattr__(self, "exprs", tuple(self.exprs))
        object.__setattr__(self, "bindings", MappingProxyType({k: float(v) for k, v in self.bindings.items()}))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"f{i}" for i in range(1, n + 1)))
        elif len(self.names) != n:
            raise ValidationError("one name per integral is required")
        compiled = tuple(CompiledExpr(e, self.space.dim, self.bindings) for e in self.exprs)
        object.__setattr__(self, "compiled", compiled)

    @classmethod
    def from_text(cls, n: int, texts: Sequence[str], bindings: Mapping[str, float] | None = None, names=()):
        space = PhaseSpace(n)
        bindings = dict(bindings or {})
        return cls(space, tuple(parse(t, space, bindings) for t in texts), bindings, tuple(names))

    @property
    def n(self) -> int:
        return self.space.n

    def compile(self, e: Expr) -> CompiledExpr:
        """Compile another expression over the same space and bindings."""
        return CompiledExpr(e, self.space.dim, self.bindings)

    def values(self, point) -> np.ndarray:
        return np.array([c.value(point) for c in self.compiled])

    def jacobian(self, point) -> np.ndarray:
        return np.array([c.grad(point) for c in self.compiled])

    def values_and_jacobian(self, point) -> tuple[np.ndarray, np.ndarray]:
        pairs = [c.value_and_grad(point) for c in self.compiled]
        return np.array([v for v, _ in pairs]), np.array([g for _, g in pairs])


# ---------------------------------------------------------------- dense kernels


def lu_det(a) -> float:
    """Determinant by Gaussian elimination with partial pivoting."""
    m = [list(map(float, row)) for row in a]
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    det = 1.0
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if m[piv][col] == 0.0:
            return 0.0
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
            det = -det
        pivot_row = m[col]
        pivot = pivot_row[col]
        det *= pivot
        for r in range(col + 1, n):
            row = m[r]
            factor = row[col] / pivot
            if factor != 0.0:
                for c in range(col + 1, n):
                    row[c] -= factor * pivot_row[c]
    return det


def numerical_rank(a, rtol: float = RANK_TOL) -> int:
    """Rank by elimination with complete pivoting.

    A pivot counts when it exceeds ``rtol`` times the largest initial entry.
    """
    m = [list(map(float, row)) for row in a]
    if not m or not m[0]:
        return 0
    rows, cols = len(m), len(m[0])
    threshold = rtol * max(abs(v) for row in m for v in row)
    if threshold == 0.0:
        return 0
    rank = 0
    for step in range(min(rows, cols)):
        best, pr, pc = -1.0, step, step
        for r in range(step, rows):
            row = m[r]
            for c in range(step, cols):
                if abs(row[c]) > best:
                    best, pr, pc = abs(row[c]), r, c
        if best <= threshold:
            break
        m[step], m[pr] = m[pr], m[step]
        if pc != step:
            for row in m:
                row[step], row[pc] = row[pc], row[step]
        pivot_row = m[step]
        for r in range(step + 1, rows):
            row = m[r]
            factor = row[step] / pivot_row[step]
            if factor != 0.0:
                for c in range(step, cols):
                    row[c] -= factor * pivot_row[c]
        rank += 1
    return rank


def _perm_sign(perm: Sequence[int]) -> int:
    seen = [False] * len(perm)
    sign = 1
    for start in range(len(perm)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


@functools.lru_cache(maxsize=4096)
def _layout(coords: tuple[tuple[int, int], ...], dim: int) -> tuple[int, tuple[int, ...], tuple[int, ...]]:
    # coords: (slot position, column) of every coordinate slot.  Permuting function
    # rows first and coordinate columns last leaves a block-triangular matrix
    # whose lower-right block is the identity.
    coord_cols = [c for _, c in coords]
    if len(set(coord_cols)) != len(coord_cols):
        return 0, (), ()
    taken = set(coord_cols)
    free = tuple(j for j in range(dim) if j not in taken)
    coord_pos = {i for i, _ in coords}
    fun_rows = tuple(i for i in range(dim) if i not in coord_pos)
    sign = _perm_sign(list(fun_rows) + [i for i, _ in coords]) * _perm_sign(list(free) + coord_cols)
    return sign, free, fun_rows


def _reduced_det(entries: Sequence[Union[int, np.ndarray]], dim: int) -> float:
    # entries[i] is a coordinate column index (unit row) or a gradient row.
    coords = tuple((i, int(s)) for i, s in enumerate(entries) if isinstance(s, (int, np.integer)))
    sign, free, fun_rows = _layout(coords, dim)
    if sign == 0:
        return 0.0
    if not fun_rows:
        return float(sign)
    block = [[entries[i][j] for j in free] for i in fun_rows]
    return sign * lu_det(block)


def hadamard_scale(rows) -> float:
    """Product of row norms, the natural size of a determinant of these rows."""
    if len(rows) == 0:
        return 1.0
    a = np.asarray(rows, dtype=float)
    return float(np.prod(np.sqrt((a * a).sum(axis=1))))


def is_zero_det(value: float, rows, tol: float = DET_TOL) -> bool:
    return abs(value) <= tol * hadamard_scale(rows)


# ---------------------------------------------------------------- brackets from a Jacobian
# J is the N x 2N Jacobian of (f1..fN); these are the workhorses reused by the constructor.


def jac_s_zero(J: np.ndarray) -> float:
    n = J.shape[0]
    return _reduced_det(J.tolist() + list(range(n)), 2 * n)


def jac_s_n(J: np.ndarray) -> float:
    n = J.shape[0]
    return _reduced_det(J.tolist() + list(range(n - 1)) + [n], 2 * n)


def jac_cofactor(J: np.ndarray, j: int, k: int) -> float:
    """{f1..f_{j-1}, y_k, f_{j+1}..fN, x1..xN}* with 1-based j, k."""
    n = len(J)
    entries = (J.tolist() if isinstance(J, np.ndarray) else list(J)) + list(range(n))
    entries[j - 1] = n + k - 1
    return _reduced_det(entries, 2 * n)


def jac_cofactors(J: np.ndarray) -> np.ndarray:
    """All cofactor brackets at once, C[j-1, k-1] = jac_cofactor(J, j, k).

    Eliminating the x slots leaves (-1)^N times the ordinary cofactor of df/dy,
    which is computed directly here.
    """
    n = J.shape[0]
    jy = J[:, n:].tolist()
    if n == 1:
        return np.array([[(-1.0) ** n]])
    out = np.empty((n, n))
    for j in range(n):
        minor_rows = jy[:j] + jy[j + 1 :]
        for k in range(n):
            minor = [row[:k] + row[k + 1 :] for row in minor_rows]
            out[j, k] = (-1) ** (n + j + k) * lu_det(minor)
    return out


def kernel_row(J: np.ndarray, cofactors: np.ndarray | None = None) -> int:
    """1-based row of the bracket adjugate used as kernel direction.

    Row N (the pattern the Neumann example exhibits) unless another row is
    larger in norm; ties keep the higher row.
    """
    if cofactors is None:
        cofactors = jac_cofactors(J)
    norms = np.linalg.norm(cofactors, axis=1)
    n = len(norms)
    return max(range(n, 0, -1), key=lambda j: norms[j - 1])


def jac_kernel(J: np.ndarray, row: int | None = None) -> np.ndarray:
    cof = jac_cofactors(J)
    if row is None:
        row = kernel_row(J, cof)
    return cof[row - 1].copy()


def poisson_grads(ga: np.ndarray, gb: np.ndarray, n: int) -> float:
    return float(ga[:n] @ gb[n:] - ga[n:] @ gb[:n])


# ---------------------------------------------------------------- public pointwise API


def bracket_star(slots: Sequence[Slot], point, bindings: Mapping[str, float] | None = None) -> float:
    """Evaluate {h1, ..., h2N}* at ``point``."""
    dim = len(point)
    if len(slots) != dim:
        raise ValidationError(f"bracket needs {dim} slots, got {len(slots)}")
    entries = []
    for s in slots:
        if isinstance(s, Coord):
            if not 0 <= s.index < dim:
                raise ValidationError(f"coordinate slot {s.index} outside 0..{dim - 1}")
            entries.append(int(s.index))
        else:
            entries.append(CompiledExpr(s.expr, dim, bindings).grad(point))
    return _reduced_det(entries, dim)


def poisson(a: Expr, b: Expr, point, bindings: Mapping[str, float] | None = None) -> float:
    dim = len(point)
    ga = CompiledExpr(a, dim, bindings).grad(point)
    gb = CompiledExpr(b, dim, bindings).grad(point)
    return poisson_grads(ga, gb, dim // 2)


def s_zero(fs: IntegralSet, point) -> float:
    """|S|_0 = {f1..fN, x1..xN}*."""
    return jac_s_zero(fs.jacobian(point))


def s_n(fs: IntegralSet, point) -> float:
    """|S|_N = {f1..fN, x1..x_{N-1}, y1}*."""
    return jac_s_n(fs.jacobian(point))


def _check_index(name: str, value: int, n: int):
    if not 1 <= value <= n:
        raise ValidationError(f"{name} must lie in 1..{n}, got {value}")


def cofactor_bracket(fs: IntegralSet, j: int, k: int, point) -> float:
    _check_index("j", j, fs.n)
    _check_index("k", k, fs.n)
    return jac_cofactor(fs.jacobian(point), j, k)


def kernel_bracket(fs: IntegralSet, k: int, point, row: int | None = None) -> float:
    """k-th component of the kernel direction of df/dy.

    This is the cofactor bracket with f_row replaced by y_k; ``row`` defaults
    to :func:`kernel_row`.
    """
    _check_index("k", k, fs.n)
    J = fs.jacobian(point)
    if row is None:
        row = kernel_row(J)
    _check_index("row", row, fs.n)
    return jac_cofactor(J, row, k)


def involution_matrix(fs: IntegralSet, point) -> np.ndarray:
    J = fs.jacobian(point)
    n = fs.n
    return np.array([[poisson_grads(J[i], J[j], n) for j in range(n)] for i in range(n)])


def independence_rank(fs: IntegralSet, point, rtol: float = RANK_TOL) -> int:
    return numerical_rank(fs.jacobian(point), rtol)


def involution_scale(J: np.ndarray) -> float:
    """Largest sum of absolute products entering any Poisson bracket of the rows of J."""
    n = J.shape[1] // 2
    a = np.abs(J)
    terms = a[:, :n] @ a[:, n:].T + a[:, n:] @ a[:, :n].T
    return float(max(terms.max(), 1e-300))

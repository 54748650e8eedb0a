"""Random expression trees for round-trip and differentiation tests."""

import numpy as np

from firstint.expr import FUNCS, Add, Const, Div, Func, Mul, Neg, Param, Pow, Sub, Var

CONSTANTS = (0.0, 1.0, 2.0, 0.5, 0.1, 3.25, 1e-3, 7e20, 123456.0, 1.0 / 3.0)
BINARY = (Add, Sub, Mul, Div)


def random_tree(rng: np.random.Generator, n: int, depth: int, params=("a", "mu")):
    """Uniformly shaped random tree of at most ``depth`` levels."""
    if depth <= 1 or rng.random() < 0.2:
        r = rng.random()
        if r < 0.5:
            return Var(int(rng.integers(2 * n)), n)
        if r < 0.8 or not params:
            return Const(float(rng.choice(CONSTANTS)))
        return Param(str(rng.choice(params)))
    kind = rng.integers(4)
    if kind == 0:
        op = BINARY[rng.integers(len(BINARY))]
        return op(random_tree(rng, n, depth - 1, params), random_tree(rng, n, depth - 1, params))
    if kind == 1:
        return Pow(random_tree(rng, n, depth - 1, params), int(rng.integers(-4, 5)))
    if kind == 2:
        return Neg(random_tree(rng, n, depth - 1, params))
    return Func(str(rng.choice(FUNCS)), random_tree(rng, n, depth - 1, params))


def tree_depth(e) -> int:
    from firstint.expr import children

    kids = children(e)
    return 1 + (max(tree_depth(k) for k in kids) if kids else 0)

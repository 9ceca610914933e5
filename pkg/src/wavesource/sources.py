"""Built-in spatial source terms and a small registry for configs.

All sources are defined on the unit interval or unit square and vanish
on the boundary, matching the homogeneous Dirichlet setting of the
forward problem.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad

from wavesource.errors import ConfigError

SQRT_PI_OVER_8 = float(np.sqrt(np.pi / 8.0))


@dataclass(frozen=True)
class Source:
    """A spatial source term.

    Attributes
    ----------
    name : str
        Registry name the source was created under.
    dim : int
        Spatial dimension, 1 or 2.
    fn : callable
        Vectorized evaluation; ``fn(x)`` in 1-D, ``fn(x, y)`` in 2-D.
    l2_norm : float or None
        Exact L2 norm when known in closed form.
    factors : pair of callables or None
        Tensor factors ``f(x, y) = fx(x) * fy(y)`` when the source is
        separable; lets spectral routines use 1-D quadrature.
    """

    name: str
    dim: int
    fn: Callable
    l2_norm: Optional[float] = None
    factors: Optional[tuple] = None

    def __call__(self, *coords):
        return self.fn(*coords)

    def norm_l2(self) -> float:
        """Exact L2 norm if known, otherwise computed by quadrature."""
        if self.l2_norm is not None:
            return self.l2_norm
        if self.dim == 1:
            val, _ = quad(lambda x: self.fn(x) ** 2, 0.0, 1.0, limit=200)
            return float(np.sqrt(val))
        if self.factors is not None:
            fx, fy = self.factors
            vx, _ = quad(lambda x: fx(x) ** 2, 0.0, 1.0, limit=200)
            vy, _ = quad(lambda y: fy(y) ** 2, 0.0, 1.0, limit=200)
            return float(np.sqrt(vx * vy))
        from scipy.integrate import dblquad

        val, _ = dblquad(lambda y, x: self.fn(x, y) ** 2, 0.0, 1.0, 0.0, 1.0)
        return float(np.sqrt(val))


def fractional_root_1d(x):
    """x^(1/4) (1-x)^(1/4): continuous, vanishing at the ends, with
    unbounded derivative there. Exact L2 norm sqrt(pi/8)."""
    x = np.asarray(x, dtype=float)
    return np.clip(x, 0.0, None) ** 0.25 * np.clip(1.0 - x, 0.0, None) ** 0.25


def _bump(t):
    # C-infinity bump on (-1, 1), peak value 1 at t = 0.
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    with np.errstate(divide="ignore", over="ignore"):
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_factor_l2_squared() -> float:
    val, _ = quad(lambda x: float(_bump(np.atleast_1d(2.0 * x - 1.0))[0]) ** 2, 0.0, 1.0, limit=200)
    return val


EXAMPLE_2D_NORM = 0.4614


def example_source_1d() -> Source:
    return Source("example1d", 1, fractional_root_1d, l2_norm=SQRT_PI_OVER_8)


def example_source_2d(target_norm: float = EXAMPLE_2D_NORM) -> Source:
    """Smooth product bump centered in the square, scaled to a prescribed
    L2 norm (default 0.4614)."""
    scale = target_norm / _bump_factor_l2_squared()

    def factor(x):
        return _bump(2.0 * np.asarray(x, dtype=float) - 1.0)

    def fn(x, y):
        return scale * factor(x) * factor(y)

    def fx(x):
        return scale * factor(x)

    return Source("example2d", 2, fn, l2_norm=target_norm, factors=(fx, factor))


def mode_source(dim: int, k: int, l: Optional[int] = None) -> Source:
    """Normalized Dirichlet eigenfunction of the Laplacian: sqrt(2) sin(k pi x)
    in 1-D, the tensor product in 2-D. Exact L2 norm 1."""
    if k < 1 or (l is not None and l < 1):
        raise ConfigError("mode indices must be positive")
    s = np.sqrt(2.0)
    if dim == 1:
        name = f"mode:{k}"
        return Source(name, 1, lambda x: s * np.sin(k * np.pi * np.asarray(x)), l2_norm=1.0)
    if l is None:
        l = k
    name = f"mode:{k},{l}"

    def fx(x):
        return s * np.sin(k * np.pi * np.asarray(x))

    def fy(y):
        return s * np.sin(l * np.pi * np.asarray(y))

    return Source(name, 2, lambda x, y: fx(x) * fy(y), l2_norm=1.0, factors=(fx, fy))


def expression_source(expr: str, dim: int) -> Source:
    """Source from a numpy expression in x (and y in 2-D), e.g.
    ``x*(1-x)``. Evaluated with numpy available as ``np``."""
    code = compile(expr, "<source expression>", "eval")
    names = {"np": np, "pi": np.pi, "sin": np.sin, "cos": np.cos, "exp": np.exp}

    if dim == 1:

        def fn(x):
            return np.broadcast_to(
                np.asarray(eval(code, {"__builtins__": {}}, {**names, "x": x}), dtype=float),
                np.shape(x),
            ).copy()

    else:

        def fn(x, y):
            out = eval(code, {"__builtins__": {}}, {**names, "x": x, "y": y})
            return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy()

    return Source(f"expr:{expr}", dim, fn)


def get_source(spec: str, dim: int) -> Source:
    """Look up a source by config name.

    Recognized forms: ``example1d``, ``example2d``, ``mode:k`` /
    ``mode:k,l``, and ``expr:<numpy expression>``.
    """
    spec = spec.strip()
    if spec == "example1d":
        if dim != 1:
            raise ConfigError("source example1d is one-dimensional")
        return example_source_1d()
    if spec == "example2d":
        if dim != 2:
            raise ConfigError("source example2d is two-dimensional")
        return example_source_2d()
    if spec.startswith("mode:"):
        try:
            parts = [int(p) for p in spec[5:].split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad mode source {spec!r}") from exc
        if dim == 1 and len(parts) == 1:
            return mode_source(1, parts[0])
        if dim == 2 and len(parts) in (1, 2):
            return mode_source(2, parts[0], parts[-1])
        raise ConfigError(f"mode source {spec!r} does not fit dimension {dim}")
    if spec.startswith("expr:"):
        return expression_source(spec[5:], dim)
    raise ConfigError(f"unknown source {spec!r}")

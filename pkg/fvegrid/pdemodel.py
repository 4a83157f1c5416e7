"""Coefficient fields and manufactured solutions for -div(D grad u) + Q.grad u + r u = f on the unit square.

All closures take broadcastable arrays ``(x, y)`` and return arrays; the benchmark solution
vanishes on the boundary, so every problem carries homogeneous Dirichlet data.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy.stats import qmc

from .exceptions import ProblemError


ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]

_SAMPLE_COUNT = 1000


def _constant(value: float) -> ScalarField:
    def field(x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, float(value))

    return field


_ZERO = _constant(0.0)
_ONE = _constant(1.0)


@dataclass(frozen=True)
class CoefficientField:
    d11: ScalarField = _ONE
    d12: ScalarField = _ZERO
    d22: ScalarField = _ONE
    q1: ScalarField = _ZERO
    q2: ScalarField = _ZERO
    r: ScalarField = _ZERO
    d11_x: ScalarField = _ZERO
    d12_x: ScalarField = _ZERO
    d12_y: ScalarField = _ZERO
    d22_y: ScalarField = _ZERO
    q1_x: ScalarField = _ZERO
    q2_y: ScalarField = _ZERO


@dataclass(frozen=True)
class CoefficientCheck:
    min_d11: float
    min_determinant: float
    kappa: float

    @property
    def positive_definite(self) -> bool:
        return self.min_d11 > 0.0 and self.min_determinant > 0.0


def sample_points(n: int = _SAMPLE_COUNT, *, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Quasi-random points in the open unit square."""
    points = qmc.Halton(d=2, scramble=True, seed=seed).random(n)
    return points[:, 0], points[:, 1]


def check_coefficients(coefficients: CoefficientField, n: int = _SAMPLE_COUNT) -> CoefficientCheck:
    """Sampled positive-definiteness of D and the lower bound kappa of r - div(Q)/2."""
    x, y = sample_points(n)
    d11 = coefficients.d11(x, y)
    d12 = coefficients.d12(x, y)
    d22 = coefficients.d22(x, y)
    margin = coefficients.r(x, y) - 0.5 * (coefficients.q1_x(x, y) + coefficients.q2_y(x, y))
    return CoefficientCheck(
        min_d11=float(d11.min()),
        min_determinant=float((d11 * d22 - d12 * d12).min()),
        kappa=float(margin.min()),
    )


@dataclass(frozen=True)
class ManufacturedProblem:
    name: str
    coefficients: CoefficientField
    u: ScalarField
    u_x: ScalarField
    u_y: ScalarField
    u_xx: ScalarField
    u_xy: ScalarField
    u_yy: ScalarField
    f: ScalarField


def _source(coefficients: CoefficientField, u, u_x, u_y, u_xx, u_xy, u_yy) -> ScalarField:
    c = coefficients

    def f(x, y):
        ux, uy = u_x(x, y), u_y(x, y)
        uxy = u_xy(x, y)
        out = -(c.d11_x(x, y) * ux + c.d11(x, y) * u_xx(x, y) + c.d12_x(x, y) * uy + c.d12(x, y) * uxy)
        out = out - (c.d12_y(x, y) * ux + c.d12(x, y) * uxy + c.d22_y(x, y) * uy + c.d22(x, y) * u_yy(x, y))
        return out + c.q1(x, y) * ux + c.q2(x, y) * uy + c.r(x, y) * u(x, y)

    return f


# u = sin(pi x) sin(2 pi y) exp(x - 1/2 + y^2)
def _parts(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s1, c1 = np.sin(np.pi * x), np.cos(np.pi * x)
    s2, c2 = np.sin(2.0 * np.pi * y), np.cos(2.0 * np.pi * y)
    e = np.exp(x - 0.5 + y * y)
    return s1, c1, s2, c2, e, y


def _u(x, y):
    s1, _, s2, _, e, _ = _parts(x, y)
    return s1 * s2 * e


def _u_x(x, y):
    s1, c1, s2, _, e, _ = _parts(x, y)
    return e * s2 * (np.pi * c1 + s1)


def _u_y(x, y):
    s1, _, s2, c2, e, yy = _parts(x, y)
    return e * s1 * (2.0 * np.pi * c2 + 2.0 * yy * s2)


def _u_xx(x, y):
    s1, c1, s2, _, e, _ = _parts(x, y)
    return e * s2 * (2.0 * np.pi * c1 + (1.0 - np.pi**2) * s1)


def _u_xy(x, y):
    s1, c1, s2, c2, e, yy = _parts(x, y)
    return e * (np.pi * c1 + s1) * (2.0 * np.pi * c2 + 2.0 * yy * s2)


def _u_yy(x, y):
    s1, _, s2, c2, e, yy = _parts(x, y)
    return e * s1 * (8.0 * np.pi * yy * c2 + (4.0 * yy * yy + 2.0 - 4.0 * np.pi**2) * s2)


def _benchmark(name: str, coefficients: CoefficientField) -> ManufacturedProblem:
    return ManufacturedProblem(
        name=name,
        coefficients=coefficients,
        u=_u,
        u_x=_u_x,
        u_y=_u_y,
        u_xx=_u_xx,
        u_xy=_u_xy,
        u_yy=_u_yy,
        f=_source(coefficients, _u, _u_x, _u_y, _u_xx, _u_xy, _u_yy),
    )


def _dr_coefficients(**extra) -> CoefficientField:
    return CoefficientField(
        d11=lambda x, y: y * np.exp(x) + 1.0,
        d22=lambda x, y: x * np.exp(y) + 1.0,
        d11_x=lambda x, y: y * np.exp(x),
        d22_y=lambda x, y: x * np.exp(y),
        r=lambda x, y: (x + 1.0) * (y + 1.0),
        **extra,
    )


def bvp_d() -> ManufacturedProblem:
    return _benchmark('BVP-D', CoefficientField())


def bvp_dr() -> ManufacturedProblem:
    return _benchmark('BVP-DR', _dr_coefficients())


def bvp_dqr() -> ManufacturedProblem:
    return _benchmark(
        'BVP-DQR',
        _dr_coefficients(
            d12=lambda x, y: x * y,
            d12_x=lambda x, y: np.asarray(y, dtype=float) + 0.0 * np.asarray(x, dtype=float),
            d12_y=lambda x, y: np.asarray(x, dtype=float) + 0.0 * np.asarray(y, dtype=float),
            q1=lambda x, y: np.cos(x) + 0.0 * np.asarray(y, dtype=float),
            q2=lambda x, y: np.cos(y) + 0.0 * np.asarray(x, dtype=float),
            q1_x=lambda x, y: -np.sin(x) + 0.0 * np.asarray(y, dtype=float),
            q2_y=lambda x, y: -np.sin(y) + 0.0 * np.asarray(x, dtype=float),
        ),
    )


def _poly_field(px: Polynomial, py: Polynomial) -> ScalarField:
    def field(x, y):
        return px(np.asarray(x, dtype=float)) * py(np.asarray(y, dtype=float))

    return field


def polynomial_problem(k: int, *, d11: float = 1.0, d12: float = 0.0, d22: float = 1.0) -> ManufacturedProblem:
    """Patch-test problem u = x(1-x)^(k-1) y(1-y)^(k-1) under a constant diffusion tensor."""
    if k < 2:
        raise ProblemError('no Q^k solution vanishing on the boundary exists for k=1')
    if d11 <= 0.0 or d11 * d22 - d12 * d12 <= 0.0:
        raise ProblemError('diffusion tensor must be positive definite')

    p = Polynomial([0.0, 1.0]) * Polynomial([1.0, -1.0]) ** (k - 1)
    dp, ddp = p.deriv(), p.deriv(2)
    coefficients = CoefficientField(d11=_constant(d11), d12=_constant(d12), d22=_constant(d22))
    u = _poly_field(p, p)
    u_xx = _poly_field(ddp, p)
    u_xy = _poly_field(dp, dp)
    u_yy = _poly_field(p, ddp)

    def f(x, y):
        return -(d11 * u_xx(x, y) + 2.0 * d12 * u_xy(x, y) + d22 * u_yy(x, y))

    return ManufacturedProblem(
        name=f'POLY-{k}',
        coefficients=coefficients,
        u=u,
        u_x=_poly_field(dp, p),
        u_y=_poly_field(p, dp),
        u_xx=u_xx,
        u_xy=u_xy,
        u_yy=u_yy,
        f=f,
    )


_BENCHMARKS: dict[str, Callable[[], ManufacturedProblem]] = {
    'BVP-D': bvp_d,
    'BVP-DR': bvp_dr,
    'BVP-DQR': bvp_dqr,
}

_POLY_NAME = re.compile(r'^POLY-(\d+)$')


def problem_names() -> tuple[str, ...]:
    return tuple(_BENCHMARKS)


def get_problem(name: str) -> ManufacturedProblem:
    """Look up a benchmark by name; ``POLY-k`` selects the patch-test problem of degree k."""
    key = name.strip().upper()
    if key in _BENCHMARKS:
        return _BENCHMARKS[key]()
    match = _POLY_NAME.match(key)
    if match:
        return polynomial_problem(int(match.group(1)))
    raise ProblemError(f'unknown problem {name!r}; known problems: {", ".join(_BENCHMARKS)}, POLY-k')

"""Reference-element machinery on [-1, 1].

Legendre polynomials, the M-function family (antiderivatives of Legendre
polynomials vanishing at both endpoints), Gauss and Gauss-Lobatto points,
1D Lagrange bases and basis changes between monomial, Legendre and M-function
coefficients. Everything here is a pure function of its arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.polynomial import legendre as npleg
from numpy.polynomial import polynomial as nppoly
from scipy.linalg import solve_triangular

from .exceptions import BasisError, QuadratureError

_GAUSS_MAX_POINTS = 20
_NEWTON_MAX_ITER = 100
_NEWTON_STEP_TOL = 1e-15

_BASES = ('monomial', 'legendre', 'mfunction')


def _as_output(values: np.ndarray, like) -> np.ndarray | float:
    if np.ndim(like) == 0:
        return float(values)
    return values


def legendre_eval(n: int, x) -> tuple:
    """Return ``(L_n(x), L_n'(x))`` through the three-term recurrence."""
    if n < 0:
        raise ValueError('n must be >= 0')
    xs = np.asarray(x, dtype=float)
    p_prev = np.ones_like(xs)
    d_prev = np.zeros_like(xs)
    if n == 0:
        return _as_output(p_prev, x), _as_output(d_prev, x)

    p = xs.copy()
    d = np.ones_like(xs)
    for m in range(1, n):
        p_next = ((2 * m + 1) * xs * p - m * p_prev) / (m + 1)
        d_next = d_prev + (2 * m + 1) * p
        p_prev, p = p, p_next
        d_prev, d = d, d_next
    return _as_output(p, x), _as_output(d, x)


def mfunction_eval(i: int, x):
    """Evaluate M_i: M_0 = 1, M_1 = x, M_i = (L_i - L_{i-2}) / (2i - 1) for i >= 2."""
    if i < 0:
        raise ValueError('i must be >= 0')
    xs = np.asarray(x, dtype=float)
    if i == 0:
        return _as_output(np.ones_like(xs), x)
    if i == 1:
        return _as_output(xs.copy(), x)
    upper, _ = legendre_eval(i, xs)
    lower, _ = legendre_eval(i - 2, xs)
    return _as_output((np.asarray(upper) - np.asarray(lower)) / (2 * i - 1), x)


def mfunction_derivative(i: int, x):
    """M_i' = L_{i-1} for i >= 1."""
    if i < 0:
        raise ValueError('i must be >= 0')
    xs = np.asarray(x, dtype=float)
    if i == 0:
        return _as_output(np.zeros_like(xs), x)
    value, _ = legendre_eval(i - 1, xs)
    return _as_output(np.asarray(value), x)


def mfunction_vandermonde(x, degree: int) -> np.ndarray:
    """Matrix ``V[p, i] = M_i(x_p)`` for ``i = 0..degree``."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    return np.stack([mfunction_eval(i, xs) for i in range(degree + 1)], axis=-1)


@lru_cache(maxsize=None)
def _mfunction_legendre_matrix(degree: int) -> np.ndarray:
    # column n holds the Legendre coefficients of M_n
    matrix = np.zeros((degree + 1, degree + 1))
    for n in range(degree + 1):
        if n < 2:
            matrix[n, n] = 1.0
        else:
            matrix[n, n] = 1.0 / (2 * n - 1)
            matrix[n - 2, n] = -1.0 / (2 * n - 1)
    matrix.setflags(write=False)
    return matrix


def mfunction_legendre_matrix(degree: int) -> np.ndarray:
    if degree < 0:
        raise ValueError('degree must be >= 0')
    return _mfunction_legendre_matrix(degree)


def _pad(coefficients: np.ndarray, length: int) -> np.ndarray:
    out = np.zeros(length)
    n = min(length, len(coefficients))
    out[:n] = coefficients[:n]
    return out


@dataclass(frozen=True, eq=False)
class Polynomial1D:
    coefficients: np.ndarray
    basis: str = 'monomial'

    def __post_init__(self) -> None:
        if self.basis not in _BASES:
            raise ValueError(f'basis must be one of {_BASES!r}')
        coefficients = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        object.__setattr__(self, 'coefficients', coefficients)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def _legendre_coefficients(self) -> np.ndarray:
        n = len(self.coefficients)
        if self.basis == 'legendre':
            return self.coefficients.copy()
        if self.basis == 'monomial':
            return _pad(np.asarray(npleg.poly2leg(self.coefficients), dtype=float), n)
        return mfunction_legendre_matrix(self.degree) @ self.coefficients

    def to(self, basis: str) -> 'Polynomial1D':
        if basis not in _BASES:
            raise ValueError(f'basis must be one of {_BASES!r}')
        if basis == self.basis:
            return Polynomial1D(self.coefficients.copy(), basis)
        n = len(self.coefficients)
        leg = self._legendre_coefficients()
        if basis == 'legendre':
            return Polynomial1D(leg, 'legendre')
        if basis == 'monomial':
            return Polynomial1D(_pad(np.asarray(npleg.leg2poly(leg), dtype=float), n), 'monomial')
        coefficients = solve_triangular(mfunction_legendre_matrix(self.degree), leg, lower=False)
        return Polynomial1D(coefficients, 'mfunction')

    def __call__(self, x):
        if self.basis == 'monomial':
            values = nppoly.polyval(np.asarray(x, dtype=float), self.coefficients)
        else:
            values = npleg.legval(np.asarray(x, dtype=float), self._legendre_coefficients())
        return _as_output(np.asarray(values, dtype=float), x)

    def deriv(self) -> 'Polynomial1D':
        monomial = self.to('monomial').coefficients
        if len(monomial) == 1:
            return Polynomial1D(np.zeros(1), 'monomial')
        return Polynomial1D(nppoly.polyder(monomial), 'monomial')

    def integral(self) -> float:
        """Integral over [-1, 1]."""
        return 2.0 * float(self._legendre_coefficients()[0])

    def roots(self) -> np.ndarray:
        monomial = np.trim_zeros(self.to('monomial').coefficients, 'b')
        if len(monomial) <= 1:
            return np.zeros(0, dtype=complex)
        return nppoly.polyroots(monomial)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    @property
    def size(self) -> int:
        return len(self.nodes)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Contract the last axis of ``values`` (sampled at the nodes) with the weights."""
        return np.asarray(values) @ self.weights

    def on_intervals(self, lo, hi) -> tuple[np.ndarray, np.ndarray]:
        """Map the rule onto ``[lo, hi]`` elementwise; shapes ``lo.shape + (n,)``."""
        lo = np.asarray(lo, dtype=float)[..., None]
        hi = np.asarray(hi, dtype=float)[..., None]
        half = 0.5 * (hi - lo)
        return 0.5 * (hi + lo) + half * self.nodes, half * self.weights


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule; nodes by Newton iteration on L_n."""
    if not 1 <= n <= _GAUSS_MAX_POINTS:
        raise ValueError(f'n must be in [1, {_GAUSS_MAX_POINTS}]')

    nodes = np.empty(n)
    weights = np.empty(n)
    for i in range(n):
        x = math.cos(math.pi * (i + 0.75) / (n + 0.5))
        for _ in range(_NEWTON_MAX_ITER):
            p, dp = legendre_eval(n, x)
            step = p / dp
            x -= step
            if abs(step) <= _NEWTON_STEP_TOL:
                break
        else:
            raise QuadratureError(f'Newton iteration for Gauss node {i} of {n} did not converge')
        _, dp = legendre_eval(n, x)
        nodes[i] = x
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp)

    order = np.argsort(nodes)
    nodes = nodes[order]
    weights = weights[order]
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights, exactness_degree=2 * n - 1)


@lru_cache(maxsize=None)
def lobatto_nodes(k: int) -> np.ndarray:
    """The k+1 Gauss-Lobatto points: -1, 1 and the roots of L_k'."""
    if k < 1:
        raise ValueError('k must be >= 1')
    if k == 1:
        nodes = np.array([-1.0, 1.0])
    else:
        unit = np.zeros(k + 1)
        unit[k] = 1.0
        interior = np.sort(np.real(npleg.legroots(npleg.legder(unit))))
        interior = 0.5 * (interior - interior[::-1])
        nodes = np.concatenate(([-1.0], interior, [1.0]))
    nodes.setflags(write=False)
    return nodes


@dataclass(frozen=True, eq=False)
class LagrangeBasis1D:
    nodes: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        n = len(nodes)
        denominators = np.empty(n)
        for i in range(n):
            others = np.delete(nodes, i)
            denominators[i] = np.prod(nodes[i] - others)
        object.__setattr__(self, 'nodes', nodes)
        object.__setattr__(self, '_denominators', denominators)

    @property
    def k(self) -> int:
        return len(self.nodes) - 1

    def values(self, x) -> np.ndarray:
        """Shape ``x.shape + (k+1,)``: ``phi_i(x)``."""
        diff = np.asarray(x, dtype=float)[..., None] - self.nodes
        n = len(self.nodes)
        out = np.empty(diff.shape)
        for i in range(n):
            others = [j for j in range(n) if j != i]
            out[..., i] = np.prod(diff[..., others], axis=-1) / self._denominators[i]
        return out

    def derivatives(self, x) -> np.ndarray:
        diff = np.asarray(x, dtype=float)[..., None] - self.nodes
        n = len(self.nodes)
        out = np.zeros(diff.shape)
        for i in range(n):
            others = [j for j in range(n) if j != i]
            for m in others:
                rest = [j for j in others if j != m]
                out[..., i] += np.prod(diff[..., rest], axis=-1)
            out[..., i] /= self._denominators[i]
        return out


def lagrange_basis_1d(k: int, nodes: Sequence[float]) -> LagrangeBasis1D:
    if k < 1:
        raise ValueError('k must be >= 1')
    arr = np.asarray(nodes, dtype=float)
    if arr.shape != (k + 1,):
        raise BasisError(f'expected {k + 1} nodes, got {arr.size}')
    gaps = np.diff(arr)
    if np.any(gaps == 0.0):
        raise BasisError('Lagrange nodes must be distinct')
    if np.any(gaps < 0.0):
        raise BasisError('Lagrange nodes must be strictly increasing')
    if arr[0] != -1.0 or arr[-1] != 1.0:
        raise BasisError('Lagrange nodes must include both endpoints -1 and 1')
    return LagrangeBasis1D(arr)


@lru_cache(maxsize=None)
def trial_basis(k: int) -> LagrangeBasis1D:
    """Lagrange basis of the trial space, placed on the Gauss-Lobatto points."""
    return lagrange_basis_1d(k, lobatto_nodes(k))

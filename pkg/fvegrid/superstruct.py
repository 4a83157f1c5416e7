"""Superconvergence structure of a dual strategy.

The correction systems tie the coefficients of the M-function expansion to the dual points,
the residual polynomial R = sum_s b*_s M_s + M_{k+1} carries the interpolation error, and its
roots are the function-value superconvergence points. Superclose fields are built element by
element from an M-tensor decomposition of the exact solution.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Any, Callable

import numpy as np
from scipy.linalg import solve_triangular

from .assembly import DiscreteField
from .dualscheme import DirectionStrategy, DualStrategy
from .exceptions import ComplexOrOutOfRangeRoot, SingularConstraintSystem
from .meshgen import RectMesh, map_to_element
from .pdemodel import ManufacturedProblem
from .refbasis import Polynomial1D, gauss_rule, legendre_eval, lobatto_nodes, mfunction_legendre_matrix, mfunction_vandermonde

logger = logging.getLogger(__name__)

_CONDITION_WARNING = 1e8
_CONDITION_SINGULAR = 1e14
_IMAG_TOL = 1e-10
_RANGE_TOL = 1e-10
_ENDPOINT_SNAP = 1e-12


class Mode(str, Enum):
    SUPER = 'super'
    ULTRA = 'ultra'


@dataclass(frozen=True)
class AmdCoefficients:
    """Corrections b*_s (``super_``) and b^{1,*}_s (``ultra``) for s = 2..k."""

    k: int
    super_: tuple[float, ...]
    ultra: tuple[float, ...]
    condition: float

    @property
    def flagged(self) -> bool:
        return self.condition >= _CONDITION_WARNING


def _constraint_matrix(direction: DirectionStrategy) -> np.ndarray:
    k = direction.k
    alpha = direction.alpha_array[: k - 1]
    # M_s' = L_{s-1}
    return np.stack([np.asarray(legendre_eval(s - 1, alpha)[0]) for s in range(2, k + 1)], axis=1)


def _solve_constraints(direction: DirectionStrategy, degree: int) -> tuple[np.ndarray, float]:
    k = direction.k
    if k < 2:
        return np.zeros(0), 1.0
    matrix = _constraint_matrix(direction)
    rhs = -np.asarray(legendre_eval(degree, direction.alpha_array[: k - 1])[0])
    condition = float(np.linalg.cond(matrix))
    if not np.isfinite(condition) or condition > _CONDITION_SINGULAR:
        raise SingularConstraintSystem(f'correction system for k={k} is singular (condition {condition:.3e})')
    try:
        return np.linalg.solve(matrix, rhs), condition
    except np.linalg.LinAlgError as e:
        raise SingularConstraintSystem(f'correction system for k={k} is singular: {e}') from e


@lru_cache(maxsize=None)
def amd_coefficients(direction: DirectionStrategy) -> AmdCoefficients:
    k = direction.k
    super_, condition = _solve_constraints(direction, k)
    ultra, _ = _solve_constraints(direction, k + 1)
    if condition >= _CONDITION_WARNING:
        logger.warning('correction system for k=%d is ill-conditioned (condition %.3e)', k, condition)
    return AmdCoefficients(k=k, super_=tuple(super_), ultra=tuple(ultra), condition=condition)


def amd_super_corrections(direction: DirectionStrategy) -> np.ndarray:
    return np.asarray(amd_coefficients(direction).super_)


def amd_ultra_corrections(direction: DirectionStrategy) -> np.ndarray:
    return np.asarray(amd_coefficients(direction).ultra)


def residual_polynomial(direction: DirectionStrategy, mode: Mode | str = Mode.SUPER) -> Polynomial1D:
    mode = Mode(mode)
    k = direction.k
    coefficients = amd_coefficients(direction)
    if mode is Mode.SUPER:
        out = np.zeros(k + 2)
        out[2 : k + 1] = coefficients.super_
        out[k + 1] = 1.0
    else:
        out = np.zeros(k + 3)
        out[2 : k + 1] = coefficients.ultra
        out[k + 2] = 1.0
    return Polynomial1D(out, 'mfunction')


def constraint_residuals(direction: DirectionStrategy, mode: Mode | str = Mode.SUPER) -> np.ndarray:
    """R'(alpha_m) for m = 1..k; the first k-1 vanish by construction."""
    derivative = residual_polynomial(direction, mode).deriv()
    return np.asarray(derivative(direction.alpha_array))


def verify_vanishing_means(direction: DirectionStrategy) -> float:
    """|integral of R over [-1, 1]|; the t = 1 companion is a multiple of R."""
    return abs(residual_polynomial(direction, Mode.SUPER).integral())


@lru_cache(maxsize=None)
def _super_points(direction: DirectionStrategy) -> np.ndarray:
    poly = residual_polynomial(direction, Mode.SUPER)
    derivative = poly.deriv()
    roots = poly.roots()
    if np.any(np.abs(roots.imag) > _IMAG_TOL):
        raise ComplexOrOutOfRangeRoot(f'residual polynomial of k={direction.k} has complex roots: {roots.tolist()}')
    points = np.sort(roots.real)
    for _ in range(2):
        slope = np.asarray(derivative(points))
        safe = np.abs(slope) > 0.0
        points[safe] -= np.asarray(poly(points))[safe] / slope[safe]
    if np.any(np.abs(points) > 1.0 + _RANGE_TOL):
        raise ComplexOrOutOfRangeRoot(f'residual polynomial of k={direction.k} has roots outside [-1, 1]: {points.tolist()}')
    points = np.clip(np.sort(points), -1.0, 1.0)
    if abs(points[0] + 1.0) < _ENDPOINT_SNAP:
        points[0] = -1.0
    if abs(points[-1] - 1.0) < _ENDPOINT_SNAP:
        points[-1] = 1.0
    if np.any(np.diff(points) <= 0.0):
        raise ComplexOrOutOfRangeRoot(f'residual polynomial of k={direction.k} has repeated roots: {points.tolist()}')
    points.setflags(write=False)
    return points


def super_points(direction: DirectionStrategy) -> np.ndarray:
    return _super_points(direction)


@dataclass(frozen=True, eq=False)
class SuperPointSets:
    alpha_x: np.ndarray
    alpha_y: np.ndarray
    ps_x: np.ndarray
    ps_y: np.ndarray

    @property
    def k(self) -> int:
        return len(self.alpha_x)

    def function_value_grid(self) -> np.ndarray:
        """(k+1)^2 reference points P^S_x x P^S_y."""
        xx, yy = np.meshgrid(self.ps_x, self.ps_y, indexing='ij')
        return np.column_stack([xx.ravel(), yy.ravel()])

    def ultra_grid(self, derivative: str = 'x') -> np.ndarray:
        """k(k+1) reference points for the derivative in direction ``derivative``."""
        if derivative == 'x':
            xx, yy = np.meshgrid(self.alpha_x, self.ps_y, indexing='ij')
        elif derivative == 'y':
            xx, yy = np.meshgrid(self.ps_x, self.alpha_y, indexing='ij')
        else:
            raise ValueError("derivative must be 'x' or 'y'")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def mapped(self, mesh: RectMesh, element: tuple[int, int]) -> np.ndarray:
        grid = self.function_value_grid()
        x, y = map_to_element(mesh, element, (grid[:, 0], grid[:, 1]))
        return np.column_stack([x, y])

    def to_dict(self) -> dict[str, Any]:
        return {
            'alpha_x': self.alpha_x.tolist(),
            'ps_x': self.ps_x.tolist(),
            'alpha_y': self.alpha_y.tolist(),
            'ps_y': self.ps_y.tolist(),
        }


def point_sets(strategy: DualStrategy) -> SuperPointSets:
    return SuperPointSets(
        alpha_x=strategy.x.alpha_array,
        alpha_y=strategy.y.alpha_array,
        ps_x=super_points(strategy.x),
        ps_y=super_points(strategy.y),
    )


def point_sets_json(strategy: DualStrategy, *, strict: bool = True) -> str:
    """JSON of the point sets; with ``strict=False`` a direction without real super points exports null."""
    if strict:
        return json.dumps(point_sets(strategy).to_dict(), indent=2)
    document: dict[str, Any] = {}
    for axis, direction in (('x', strategy.x), ('y', strategy.y)):
        document[f'alpha_{axis}'] = direction.alpha_array.tolist()
        try:
            document[f'ps_{axis}'] = super_points(direction).tolist()
        except ComplexOrOutOfRangeRoot as e:
            logger.warning('no super points in %s: %s', axis, e)
            document[f'ps_{axis}'] = None
    return json.dumps(document, indent=2)


@dataclass(frozen=True, eq=False)
class MDecomposition:
    element: tuple[int, int]
    degree: int
    coefficients: np.ndarray

    def __call__(self, xh, yh) -> np.ndarray:
        """Evaluate the M-tensor polynomial on the reference tensor grid xh x yh."""
        vx = mfunction_vandermonde(xh, self.degree)
        vy = mfunction_vandermonde(yh, self.degree)
        return vx @ self.coefficients @ vy.T


def _to_mfunction(legendre: np.ndarray, degree: int) -> np.ndarray:
    # B = T^-1 C T^-T, T the M -> Legendre change of basis
    inverse = solve_triangular(mfunction_legendre_matrix(degree), np.eye(degree + 1), lower=False)
    return np.einsum('as,...st,bt->...ab', inverse, legendre, inverse, optimize=True)


def _projection_weights(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes and the Legendre projection weights for Q^degree on the reference square."""
    if degree < 0:
        raise ValueError('degree must be >= 0')
    rule = gauss_rule(degree + 2)
    legendre = np.stack([np.asarray(legendre_eval(s, rule.nodes)[0]) for s in range(degree + 1)], axis=1)
    scale = (2.0 * np.arange(degree + 1) + 1.0) / 2.0
    return rule.nodes, legendre * rule.weights[:, None] * scale[None, :]


def _project(values: np.ndarray, weighted: np.ndarray, degree: int) -> np.ndarray:
    projection = np.einsum('...gh,gs,ht->...st', values, weighted, weighted, optimize=True)
    return _to_mfunction(projection, degree)


def mdecompose_mesh(function: Callable, mesh: RectMesh, degree: int) -> np.ndarray:
    """M-tensor coefficients b[i, j, s, t] of the local L2 projection onto Q^degree in every element."""
    nodes, weighted = _projection_weights(degree)
    x, y = mesh.physical_grid(nodes, nodes)
    return _project(np.broadcast_to(function(x, y), x.shape), weighted, degree)


def mdecompose_element(function: Callable, mesh: RectMesh, element: tuple[int, int], degree: int) -> MDecomposition:
    i, j = mesh._check_element(element)
    nodes, weighted = _projection_weights(degree)
    x, y = map_to_element(mesh, (i, j), np.meshgrid(nodes, nodes, indexing='ij'))
    values = np.broadcast_to(function(x, y), x.shape)
    return MDecomposition(element=(i, j), degree=degree, coefficients=_project(values, weighted, degree))


def superclose_coefficients(b: np.ndarray, strategy: DualStrategy, mode: Mode | str = Mode.SUPER) -> np.ndarray:
    """Coefficient tables of u_I (indices 0..k) from decomposition tables b (indices 0..k+1 or 0..k+2)."""
    mode = Mode(mode)
    k = strategy.k
    limit = k + 1 if mode is Mode.SUPER else k + 2
    if b.shape[-1] < limit + 1 or b.shape[-2] < limit + 1:
        raise ValueError(f'{mode.value} construction needs decomposition degree >= {limit}')

    out = np.zeros(b.shape[:-2] + (k + 1, k + 1))
    s = np.arange(k + 1)[:, None]
    t = np.arange(k + 1)[None, :]
    keep = ((s <= 1) & (t <= 1)) | ((s >= 2) & (t >= 2) & (s + t <= limit))
    out[..., keep] = b[..., : k + 1, : k + 1][..., keep]

    cx = amd_coefficients(strategy.x)
    cy = amd_coefficients(strategy.y)
    if k >= 2:
        beta_x = np.asarray(cx.super_)
        beta_y = np.asarray(cy.super_)
        for tt in (0, 1):
            out[..., 2:, tt] = b[..., 2 : k + 1, tt] - b[..., k + 1, tt][..., None] * beta_x
            out[..., tt, 2:] = b[..., tt, 2 : k + 1] - b[..., tt, k + 1][..., None] * beta_y
            if mode is Mode.ULTRA:
                out[..., 2:, tt] -= b[..., k + 2, tt][..., None] * np.asarray(cx.ultra)
                out[..., tt, 2:] -= b[..., tt, k + 2][..., None] * np.asarray(cy.ultra)
    return out


def build_superclose(problem: ManufacturedProblem, mesh: RectMesh, strategy: DualStrategy, mode: Mode | str = Mode.SUPER) -> DiscreteField:
    """Broken field u_I,Super or u_I,Ultra on the trial nodes of every element."""
    mode = Mode(mode)
    k = strategy.k
    degree = k + 1 if mode is Mode.SUPER else k + 2
    b = mdecompose_mesh(problem.u, mesh, degree)
    table = superclose_coefficients(b, strategy, mode)
    v = mfunction_vandermonde(lobatto_nodes(k), k)
    local = np.einsum('ps,ijst,qt->ijpq', v, table, v, optimize=True)
    return DiscreteField(mesh=mesh, k=k, local_values=local, strategy=strategy)


def edge_jumps(field: DiscreteField, samples: int | None = None) -> float:
    """Largest jump of a (possibly broken) field across interior element edges."""
    n = samples if samples is not None else field.k + 3
    s = np.linspace(-1.0, 1.0, n)
    ends = np.array([-1.0, 1.0])
    across_x = field.grid_values(ends, s)
    across_y = field.grid_values(s, ends)
    jump_x = np.abs(across_x[1:, :, 0, :] - across_x[:-1, :, 1, :])
    jump_y = np.abs(across_y[:, 1:, :, 0] - across_y[:, :-1, :, 1])
    return float(max(jump_x.max(initial=0.0), jump_y.max(initial=0.0)))

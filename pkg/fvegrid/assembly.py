"""Element-wise assembly of the finite volume element (Petrov-Galerkin) and Galerkin FEM systems.

Every element contributes a dense block ``K[s, t, p, q]``: for FVE the row (s, t) is the sub-cell of
the element that belongs to the control volume of local node (s, t); for FEM it is the test basis
function (s, t). Columns are always the tensor Lagrange trial functions on the Lobatto nodes.
Blocks of all elements are computed at once with ``einsum`` and scattered into a COO triplet list.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.io import mmwrite
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import LinearOperator, gmres, spilu, splu

from .dualscheme import DirectionStrategy, DualStrategy
from .exceptions import MeshError, SolverFailure
from .meshgen import DofMap, RectMesh, global_dof_map, map_from_element
from .pdemodel import CoefficientField, ManufacturedProblem, ScalarField
from .refbasis import LagrangeBasis1D, gauss_rule, trial_basis

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-12
_DENSE_SVD_LIMIT = 3000


def quadrature_points(k: int) -> int:
    return 2 * k + 3


@dataclass(frozen=True, eq=False)
class SparseSystem:
    """Assembled linear system; ``dofs`` maps its rows to global node indices."""

    matrix: csr_matrix
    rhs: np.ndarray
    dofmap: DofMap
    dofs: np.ndarray
    kind: str

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.dofmap.k

    @property
    def eliminated(self) -> bool:
        return len(self.dofs) < self.dofmap.n_dofs


@dataclass(frozen=True)
class _SubintervalTable:
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray


def _subinterval_table(basis: LagrangeBasis1D, breaks: np.ndarray, n_points: int) -> _SubintervalTable:
    nodes, weights = gauss_rule(n_points).on_intervals(breaks[:-1], breaks[1:])
    return _SubintervalTable(nodes, weights, basis.values(nodes), basis.derivatives(nodes))


def _dual_breaks(direction: DirectionStrategy) -> np.ndarray:
    return np.concatenate(([-1.0], direction.alpha_array, [1.0]))


def _physical(centers: np.ndarray, sizes: np.ndarray, reference: np.ndarray) -> np.ndarray:
    shape = (-1,) + (1,) * np.ndim(reference)
    return centers.reshape(shape) + 0.5 * sizes.reshape(shape) * reference


def _sample(field: ScalarField, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    shape = np.broadcast_shapes(x.shape, y.shape)
    return np.broadcast_to(field(x, y), shape)


def _per_element(values: np.ndarray, extra_axes: int) -> np.ndarray:
    return values.reshape(values.shape + (1,) * extra_axes)


def _finalize(mesh: RectMesh, dofmap: DofMap, blocks: np.ndarray, loads: np.ndarray, kind: str, eliminate_boundary: bool) -> SparseSystem:
    dofs = dofmap.element_dofs
    k1 = dofmap.k + 1
    rows = np.broadcast_to(dofs[:, :, :, :, None, None], blocks.shape)
    cols = np.broadcast_to(dofs[:, :, None, None, :, :], blocks.shape)
    n = dofmap.n_dofs
    matrix = coo_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    rhs = np.bincount(dofs.ravel(), weights=loads.ravel(), minlength=n)
    logger.debug('%s: %d element blocks of size %d scattered into %d dofs', kind, mesh.nx * mesh.ny, k1 * k1, n)

    if not eliminate_boundary:
        return SparseSystem(matrix=matrix, rhs=rhs, dofmap=dofmap, dofs=np.arange(n), kind=kind)
    # u = 0 on the boundary, so boundary columns contribute nothing to the right-hand side
    interior = dofmap.interior
    reduced = matrix[interior][:, interior].tocsr()
    return SparseSystem(matrix=reduced, rhs=rhs[interior], dofmap=dofmap, dofs=interior, kind=kind)


def _check_order(mesh: RectMesh, k: int) -> None:
    if k < 1:
        raise ValueError('k must be >= 1')
    if mesh.nx < 2 or mesh.ny < 2:
        raise MeshError('assembly needs at least 2 cells per direction')


def assemble_fve(
    mesh: RectMesh,
    strategy: DualStrategy,
    problem: ManufacturedProblem,
    *,
    k: int | None = None,
    eliminate_boundary: bool = True,
) -> SparseSystem:
    """Finite volume element system for the dual mesh defined by ``strategy``.

    Only the dual points enter; the interpolation parameters of the strategy play no role.
    """
    if k is not None and k != strategy.k:
        raise ValueError(f'requested order k={k} does not match strategy order {strategy.k}')
    k = strategy.k
    _check_order(mesh, k)
    started = time.perf_counter()

    c: CoefficientField = problem.coefficients
    basis = trial_basis(k)
    n_points = quadrature_points(k)
    bx = _dual_breaks(strategy.x)
    by = _dual_breaks(strategy.y)
    sx = _subinterval_table(basis, bx, n_points)
    sy = _subinterval_table(basis, by, n_points)
    line_x, line_y = bx[1:-1], by[1:-1]
    lx, dlx = basis.values(line_x), basis.derivatives(line_x)
    ly, dly = basis.values(line_y), basis.derivatives(line_y)

    hx, hy = mesh.hx, mesh.hy
    ratio_yx = _per_element(hy[None, :] / hx[:, None], 4)
    ratio_xy = _per_element(hx[:, None] / hy[None, :], 4)
    blocks = np.zeros((mesh.nx, mesh.ny, k + 1, k + 1, k + 1, k + 1))

    # vertical dual lines x = alpha_m: column m-1 on the left, column m on the right
    x_line = _physical(mesh.x_centers, hx, line_x)[:, None, :, None, None]
    y_sub = _physical(mesh.y_centers, hy, sy.nodes)[None, :, None, :, :]
    d11 = _sample(c.d11, x_line, y_sub)
    d12 = _sample(c.d12, x_line, y_sub)
    flux = np.einsum('ijmtg,tg,mp,tgq->ijmtpq', d11, sy.weights, dlx, sy.values, optimize=True) * ratio_yx
    flux += np.einsum('ijmtg,tg,mp,tgq->ijmtpq', d12, sy.weights, lx, sy.derivatives, optimize=True)
    blocks[:, :, :-1] -= flux
    blocks[:, :, 1:] += flux

    # horizontal dual lines y = alpha_m: row m-1 below, row m above
    x_sub = _physical(mesh.x_centers, hx, sx.nodes)[:, None, :, :, None]
    y_line = _physical(mesh.y_centers, hy, line_y)[None, :, None, None, :]
    d12 = _sample(c.d12, x_sub, y_line)
    d22 = _sample(c.d22, x_sub, y_line)
    flux = np.einsum('ijsgm,sg,sgp,mq->ijsmpq', d12, sx.weights, sx.derivatives, ly, optimize=True)
    flux += np.einsum('ijsgm,sg,sgp,mq->ijsmpq', d22, sx.weights, sx.values, dly, optimize=True) * ratio_xy
    blocks[:, :, :, :-1] -= flux
    blocks[:, :, :, 1:] += flux

    # convection, reaction and load over each sub-cell
    xv = _physical(mesh.x_centers, hx, sx.nodes)[:, None, :, :, None, None]
    yv = _physical(mesh.y_centers, hy, sy.nodes)[None, :, None, None, :, :]
    half_hy = _per_element(np.broadcast_to(0.5 * hy[None, :], (mesh.nx, mesh.ny)), 4)
    half_hx = _per_element(np.broadcast_to(0.5 * hx[:, None], (mesh.nx, mesh.ny)), 4)
    quarter_area = _per_element(0.25 * mesh.element_areas(), 4)
    volume = 'ijsgth,sg,th,sgp,thq->ijstpq'
    blocks += np.einsum(volume, _sample(c.q1, xv, yv), sx.weights, sy.weights, sx.derivatives, sy.values, optimize=True) * half_hy
    blocks += np.einsum(volume, _sample(c.q2, xv, yv), sx.weights, sy.weights, sx.values, sy.derivatives, optimize=True) * half_hx
    blocks += np.einsum(volume, _sample(c.r, xv, yv), sx.weights, sy.weights, sx.values, sy.values, optimize=True) * quarter_area
    loads = np.einsum('ijsgth,sg,th->ijst', _sample(problem.f, xv, yv), sx.weights, sy.weights, optimize=True)
    loads *= _per_element(0.25 * mesh.element_areas(), 2)

    system = _finalize(mesh, global_dof_map(mesh, k), blocks, loads, 'fve', eliminate_boundary)
    logger.info(
        'assembled FVE k=%d on %dx%d mesh: %d unknowns in %.3fs',
        k, mesh.nx, mesh.ny, system.dimension, time.perf_counter() - started,
    )
    return system


def assemble_fem(mesh: RectMesh, k: int, problem: ManufacturedProblem, *, eliminate_boundary: bool = True) -> SparseSystem:
    """Galerkin system of the bi-k Lagrange finite element method."""
    _check_order(mesh, k)
    started = time.perf_counter()

    c = problem.coefficients
    basis = trial_basis(k)
    rule = gauss_rule(quadrature_points(k))
    l, dl = basis.values(rule.nodes), basis.derivatives(rule.nodes)
    w = rule.weights

    x = _physical(mesh.x_centers, mesh.hx, rule.nodes)[:, None, :, None]
    y = _physical(mesh.y_centers, mesh.hy, rule.nodes)[None, :, None, :]
    hx, hy = mesh.hx, mesh.hy
    ratio_yx = _per_element(hy[None, :] / hx[:, None], 4)
    ratio_xy = _per_element(hx[:, None] / hy[None, :], 4)
    half_hy = _per_element(np.broadcast_to(0.5 * hy[None, :], (mesh.nx, mesh.ny)), 4)
    half_hx = _per_element(np.broadcast_to(0.5 * hx[:, None], (mesh.nx, mesh.ny)), 4)
    quarter_area = _per_element(0.25 * mesh.element_areas(), 4)

    form = 'ijgh,g,h,gp,hq,gs,ht->ijstpq'

    def term(field: ScalarField, trial_x, trial_y, test_x, test_y) -> np.ndarray:
        return np.einsum(form, _sample(field, x, y), w, w, trial_x, trial_y, test_x, test_y, optimize=True)

    blocks = term(c.d11, dl, l, dl, l) * ratio_yx
    blocks += term(c.d12, dl, l, l, dl) + term(c.d12, l, dl, dl, l)
    blocks += term(c.d22, l, dl, l, dl) * ratio_xy
    blocks += term(c.q1, dl, l, l, l) * half_hy
    blocks += term(c.q2, l, dl, l, l) * half_hx
    blocks += term(c.r, l, l, l, l) * quarter_area
    loads = np.einsum('ijgh,g,h,gs,ht->ijst', _sample(problem.f, x, y), w, w, l, l, optimize=True)
    loads *= _per_element(0.25 * mesh.element_areas(), 2)

    system = _finalize(mesh, global_dof_map(mesh, k), blocks, loads, 'fem', eliminate_boundary)
    logger.info(
        'assembled FEM k=%d on %dx%d mesh: %d unknowns in %.3fs',
        k, mesh.nx, mesh.ny, system.dimension, time.perf_counter() - started,
    )
    return system


def _relative_residual(matrix, x: np.ndarray, rhs: np.ndarray) -> float:
    norm_b = float(np.linalg.norm(rhs))
    norm_r = float(np.linalg.norm(matrix @ x - rhs))
    return norm_r / norm_b if norm_b > 0.0 else norm_r


def solve(
    system: SparseSystem,
    *,
    tol: float = DEFAULT_TOLERANCE,
    max_iter: int | None = None,
    method: str = 'direct',
) -> np.ndarray:
    """Solve ``system``; raises SolverFailure when the relative residual exceeds ``tol``."""
    matrix = system.matrix
    rhs = system.rhs
    started = time.perf_counter()

    if method == 'direct':
        try:
            x = splu(matrix.tocsc()).solve(rhs)
        except RuntimeError as e:
            raise SolverFailure(f'sparse LU failed for {system.dimension} unknowns: {e}', residual=float('inf')) from e
    elif method == 'gmres':
        try:
            ilu = spilu(matrix.tocsc(), drop_tol=1e-6, fill_factor=20)
        except RuntimeError as e:
            raise SolverFailure(f'incomplete LU failed for {system.dimension} unknowns: {e}', residual=float('inf')) from e
        preconditioner = LinearOperator(matrix.shape, ilu.solve)
        x, info = gmres(matrix, rhs, M=preconditioner, rtol=tol, atol=0.0, restart=100, maxiter=max_iter)
        logger.debug('gmres finished with info=%d', info)
    else:
        raise ValueError(f'unknown solve method {method!r}')

    if not np.all(np.isfinite(x)):
        raise SolverFailure(f'solution of {system.dimension} unknowns is not finite', residual=float('inf'))
    residual = _relative_residual(matrix, x, rhs)
    if residual > tol:
        raise SolverFailure(f'relative residual {residual:.3e} exceeds tolerance {tol:.1e}', residual=residual)
    logger.info('solved %d unknowns (%s) in %.3fs, residual %.2e', system.dimension, method, time.perf_counter() - started, residual)
    return x


def smallest_singular_value(system: SparseSystem) -> float:
    """Smallest singular value of a small assembled matrix (dense SVD)."""
    if system.dimension > _DENSE_SVD_LIMIT:
        raise ValueError(f'dense SVD limited to {_DENSE_SVD_LIMIT} unknowns, got {system.dimension}')
    return float(np.linalg.svd(system.matrix.toarray(), compute_uv=False).min())


def export_matrix_market(system: SparseSystem, path: Path | str) -> tuple[Path, Path]:
    """Write the matrix to ``path`` and the right-hand side next to it as ``<stem>_rhs.mtx``."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    rhs_path = target.with_name(f'{target.stem}_rhs.mtx')
    mmwrite(str(target), system.matrix.tocoo())
    mmwrite(str(rhs_path), system.rhs[:, None])
    return target, rhs_path


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Piecewise bi-k polynomial stored as element-local nodal values on the Lobatto nodes.

    ``coefficients`` holds the global nodal vector of a continuous field; broken fields
    (independent values per element) leave it ``None``.
    """

    mesh: RectMesh
    k: int
    local_values: np.ndarray
    coefficients: np.ndarray | None = None
    strategy: DualStrategy | None = None

    @property
    def broken(self) -> bool:
        return self.coefficients is None

    def grid_values(self, xh, yh) -> np.ndarray:
        """Values on a reference tensor grid mapped into every element, shape (nx, ny, len(xh), len(yh))."""
        basis = trial_basis(self.k)
        return np.einsum('ijpq,ap,bq->ijab', self.local_values, basis.values(np.asarray(xh)), basis.values(np.asarray(yh)), optimize=True)

    def grid_gradient(self, xh, yh) -> tuple[np.ndarray, np.ndarray]:
        basis = trial_basis(self.k)
        xh, yh = np.asarray(xh), np.asarray(yh)
        gx = np.einsum('ijpq,ap,bq->ijab', self.local_values, basis.derivatives(xh), basis.values(yh), optimize=True)
        gy = np.einsum('ijpq,ap,bq->ijab', self.local_values, basis.values(xh), basis.derivatives(yh), optimize=True)
        gx *= (2.0 / self.mesh.hx)[:, None, None, None]
        gy *= (2.0 / self.mesh.hy)[None, :, None, None]
        return gx, gy

    def _locate(self, x: float, y: float, element: tuple[int, int] | None) -> tuple[tuple[int, int], float, float]:
        if element is None:
            element = self.mesh.locate(x, y)
        xh, yh = map_from_element(self.mesh, element, (x, y))
        return element, xh, yh

    def evaluate(self, x: float, y: float, *, element: tuple[int, int] | None = None) -> float:
        (i, j), xh, yh = self._locate(x, y, element)
        basis = trial_basis(self.k)
        return float(basis.values(xh) @ self.local_values[i - 1, j - 1] @ basis.values(yh))

    def evaluate_gradient(self, x: float, y: float, *, element: tuple[int, int] | None = None) -> tuple[float, float]:
        (i, j), xh, yh = self._locate(x, y, element)
        basis = trial_basis(self.k)
        values = self.local_values[i - 1, j - 1]
        gx = basis.derivatives(xh) @ values @ basis.values(yh) * 2.0 / self.mesh.hx[i - 1]
        gy = basis.values(xh) @ values @ basis.derivatives(yh) * 2.0 / self.mesh.hy[j - 1]
        return float(gx), float(gy)


def field_from_coefficients(mesh: RectMesh, k: int, coefficients: np.ndarray, *, strategy: DualStrategy | None = None) -> DiscreteField:
    coefficients = np.asarray(coefficients, dtype=float)
    dofmap = global_dof_map(mesh, k)
    if coefficients.shape != (dofmap.n_dofs,):
        raise ValueError(f'expected {dofmap.n_dofs} nodal coefficients, got {coefficients.shape}')
    return DiscreteField(mesh=mesh, k=k, local_values=coefficients[dofmap.element_dofs], coefficients=coefficients, strategy=strategy)


def field_from_solution(system: SparseSystem, mesh: RectMesh, x: np.ndarray, *, strategy: DualStrategy | None = None) -> DiscreteField:
    """Scatter a solution vector back to all nodes; eliminated boundary nodes are zero."""
    full = np.zeros(system.dofmap.n_dofs)
    full[system.dofs] = x
    return field_from_coefficients(mesh, system.k, full, strategy=strategy)


def interpolate(mesh: RectMesh, k: int, function: Callable, *, zero_boundary: bool = False) -> DiscreteField:
    """Nodal interpolant on the trial nodes; ``zero_boundary`` forces homogeneous Dirichlet values."""
    gx, gy = mesh.nodal_coordinates(k)
    xx, yy = np.meshgrid(gx, gy, indexing='ij')
    values = np.array(np.broadcast_to(function(xx, yy), xx.shape), dtype=float).ravel()
    if zero_boundary:
        values[global_dof_map(mesh, k).boundary] = 0.0
    return field_from_coefficients(mesh, k, values)


def interpolate_problem(mesh: RectMesh, k: int, problem: ManufacturedProblem) -> DiscreteField:
    return interpolate(mesh, k, problem.u, zero_boundary=True)


def solve_problem(
    mesh: RectMesh,
    problem: ManufacturedProblem,
    *,
    strategy: DualStrategy | None = None,
    k: int | None = None,
    method: str = 'direct',
    tol: float = DEFAULT_TOLERANCE,
) -> DiscreteField:
    """Assemble and solve; FVE when a strategy is given, Galerkin FEM of order ``k`` otherwise."""
    if strategy is not None:
        system = assemble_fve(mesh, strategy, problem, k=k)
    elif k is not None:
        system = assemble_fem(mesh, k, problem)
    else:
        raise ValueError('either a dual strategy or an order k is required')
    x = solve(system, tol=tol, method=method)
    return field_from_solution(system, mesh, x, strategy=strategy)

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .config import MESH_SCHEMA, load_document
from .dualscheme import DualStrategy
from .exceptions import MeshError
from .refbasis import lobatto_nodes

logger = logging.getLogger(__name__)

DEFAULT_C1_BOUND = 3.0
DEFAULT_PERTURBATION = 0.3
_INSIDE_TOL = 1e-12


def _check_coordinates(coords: np.ndarray, axis: str) -> None:
    if coords.ndim != 1 or len(coords) < 3:
        raise MeshError(f'{axis}-coordinates need at least 3 entries (2 cells)')
    if coords[0] != 0.0 or coords[-1] != 1.0:
        raise MeshError(f'{axis}-coordinates must start at 0 and end at 1')
    if np.any(np.diff(coords) <= 0.0):
        raise MeshError(f'{axis}-coordinates must be strictly increasing')


@dataclass(frozen=True, eq=False)
class RectMesh:
    x_coords: np.ndarray
    y_coords: np.ndarray
    c1_bound: float = DEFAULT_C1_BOUND

    def __post_init__(self) -> None:
        for name in ('x_coords', 'y_coords'):
            coords = np.array(getattr(self, name), dtype=float)
            coords.setflags(write=False)
            object.__setattr__(self, name, coords)
        _check_coordinates(self.x_coords, 'x')
        _check_coordinates(self.y_coords, 'y')
        if self.c1 > self.c1_bound * (1.0 + 1e-12):
            raise MeshError(f'quasi-uniformity ratio {self.c1:.4f} exceeds bound {self.c1_bound:.4f}')

    @property
    def nx(self) -> int:
        return len(self.x_coords) - 1

    @property
    def ny(self) -> int:
        return len(self.y_coords) - 1

    @property
    def hx(self) -> np.ndarray:
        return np.diff(self.x_coords)

    @property
    def hy(self) -> np.ndarray:
        return np.diff(self.y_coords)

    @property
    def h(self) -> float:
        """Largest cell extent."""
        return float(max(self.hx.max(), self.hy.max()))

    @property
    def h_nominal(self) -> float:
        return 1.0 / max(self.nx, self.ny)

    @property
    def c1(self) -> float:
        h = self.h
        return float(max(h / self.hx.min(), h / self.hy.min()))

    @property
    def x_centers(self) -> np.ndarray:
        return 0.5 * (self.x_coords[:-1] + self.x_coords[1:])

    @property
    def y_centers(self) -> np.ndarray:
        return 0.5 * (self.y_coords[:-1] + self.y_coords[1:])

    def element_areas(self) -> np.ndarray:
        return np.outer(self.hx, self.hy)

    def physical_grid(self, xh, yh) -> tuple[np.ndarray, np.ndarray]:
        """Map a reference tensor grid into every element; both arrays have shape (nx, ny, len(xh), len(yh))."""
        xh = np.asarray(xh, dtype=float)
        yh = np.asarray(yh, dtype=float)
        x = self.x_centers[:, None] + 0.5 * self.hx[:, None] * xh
        y = self.y_centers[:, None] + 0.5 * self.hy[:, None] * yh
        shape = (self.nx, self.ny, len(xh), len(yh))
        return (
            np.broadcast_to(x[:, None, :, None], shape),
            np.broadcast_to(y[None, :, None, :], shape),
        )

    def nodal_coordinates(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates of the global tensor Lagrange nodes along each axis (Lobatto nodes in every cell)."""
        nodes = lobatto_nodes(k)
        gx = np.empty(k * self.nx + 1)
        gy = np.empty(k * self.ny + 1)
        gx[:-1] = (self.x_centers[:, None] + 0.5 * self.hx[:, None] * nodes[:-1]).ravel()
        gy[:-1] = (self.y_centers[:, None] + 0.5 * self.hy[:, None] * nodes[:-1]).ravel()
        gx[-1] = 1.0
        gy[-1] = 1.0
        return gx, gy

    def _check_element(self, element: tuple[int, int]) -> tuple[int, int]:
        i, j = element
        if not (1 <= i <= self.nx and 1 <= j <= self.ny):
            raise MeshError(f'element {element} outside a {self.nx}x{self.ny} mesh')
        return i, j

    def locate(self, x: float, y: float) -> tuple[int, int]:
        """Owning element of a point; points on a shared edge belong to the element above/right of it."""
        if not (-_INSIDE_TOL <= x <= 1.0 + _INSIDE_TOL and -_INSIDE_TOL <= y <= 1.0 + _INSIDE_TOL):
            raise MeshError(f'point ({x}, {y}) lies outside the unit square')
        i = int(np.clip(np.searchsorted(self.x_coords, x, side='right'), 1, self.nx))
        j = int(np.clip(np.searchsorted(self.y_coords, y, side='right'), 1, self.ny))
        return i, j


def uniform_mesh(nx: int, ny: int, *, c1_bound: float = DEFAULT_C1_BOUND) -> RectMesh:
    if nx < 2 or ny < 2:
        raise ValueError('a mesh needs at least 2 cells per direction')
    return RectMesh(np.linspace(0.0, 1.0, nx + 1), np.linspace(0.0, 1.0, ny + 1), c1_bound=c1_bound)


def perturbation_c1_bound(nx: int, ny: int, delta: float) -> float:
    """Worst-case quasi-uniformity ratio reachable by the jitter of ``perturbed_mesh``."""
    return (1.0 + 2.0 * delta) / (1.0 - 2.0 * delta) * max(nx, ny) / min(nx, ny)


def perturbed_mesh(
    nx: int,
    ny: int,
    delta: float = DEFAULT_PERTURBATION,
    seed: int = 0,
    *,
    c1_bound: float = DEFAULT_C1_BOUND,
) -> RectMesh:
    """Uniform mesh with every interior coordinate shifted by an independent draw from [-delta/N, delta/N]."""
    if nx < 2 or ny < 2:
        raise ValueError('a mesh needs at least 2 cells per direction')
    if not 0.0 <= delta < 0.5:
        raise ValueError('delta must lie in [0, 1/2)')

    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, nx + 1)
    y = np.linspace(0.0, 1.0, ny + 1)
    x[1:-1] += rng.uniform(-delta / nx, delta / nx, size=nx - 1)
    y[1:-1] += rng.uniform(-delta / ny, delta / ny, size=ny - 1)
    bound = max(c1_bound, perturbation_c1_bound(nx, ny, delta))
    return RectMesh(x, y, c1_bound=bound)


def perturbed_family(
    sizes: Sequence[int],
    delta: float = DEFAULT_PERTURBATION,
    seed: int = 0,
    *,
    c1_bound: float = DEFAULT_C1_BOUND,
) -> list[RectMesh]:
    """Square perturbed meshes that refine one geometry.

    One jitter pattern of period gcd(sizes) is drawn per direction and repeated at every level, so
    each mesh is the same relative perturbation of its uniform counterpart. Without a common period
    above 1 the levels fall back to independent draws.
    """
    if not sizes:
        raise ValueError('a mesh family needs at least one size')
    if not 0.0 <= delta < 0.5:
        raise ValueError('delta must lie in [0, 1/2)')
    if min(sizes) < 2:
        raise ValueError('a mesh needs at least 2 cells per direction')
    period = math.gcd(*sizes)
    if period < 2:
        logger.warning('mesh sizes %s share no period; perturbing each level independently', list(sizes))
        return [perturbed_mesh(n, n, delta, seed, c1_bound=c1_bound) for n in sizes]

    rng = np.random.default_rng(seed)
    # offset 0 at multiples of the period keeps both boundary coordinates fixed
    pattern_x = np.concatenate([[0.0], rng.uniform(-delta, delta, size=period - 1)])
    pattern_y = np.concatenate([[0.0], rng.uniform(-delta, delta, size=period - 1)])
    meshes = []
    for n in sizes:
        phase = np.arange(n + 1) % period
        x = np.linspace(0.0, 1.0, n + 1) + pattern_x[phase] / n
        y = np.linspace(0.0, 1.0, n + 1) + pattern_y[phase] / n
        meshes.append(RectMesh(x, y, c1_bound=max(c1_bound, perturbation_c1_bound(n, n, delta))))
    return meshes


def map_to_element(mesh: RectMesh, element: tuple[int, int], reference) -> tuple:
    i, j = mesh._check_element(element)
    xh, yh = reference
    x = mesh.x_centers[i - 1] + 0.5 * mesh.hx[i - 1] * np.asarray(xh, dtype=float)
    y = mesh.y_centers[j - 1] + 0.5 * mesh.hy[j - 1] * np.asarray(yh, dtype=float)
    if np.ndim(x) == 0:
        return float(x), float(y)
    return x, y


def map_from_element(mesh: RectMesh, element: tuple[int, int], point) -> tuple:
    i, j = mesh._check_element(element)
    x = np.asarray(point[0], dtype=float)
    y = np.asarray(point[1], dtype=float)
    x0, x1 = mesh.x_coords[i - 1], mesh.x_coords[i]
    y0, y1 = mesh.y_coords[j - 1], mesh.y_coords[j]
    if (
        np.any(x < x0 - _INSIDE_TOL)
        or np.any(x > x1 + _INSIDE_TOL)
        or np.any(y < y0 - _INSIDE_TOL)
        or np.any(y > y1 + _INSIDE_TOL)
    ):
        raise MeshError(f'point outside element {element}')
    xh = (x - mesh.x_centers[i - 1]) * 2.0 / mesh.hx[i - 1]
    yh = (y - mesh.y_centers[j - 1]) * 2.0 / mesh.hy[j - 1]
    if np.ndim(xh) == 0:
        return float(xh), float(yh)
    return xh, yh


@dataclass(frozen=True)
class DualSegment:
    """Interior dual line segment inside an element.

    ``axis='x'`` is a vertical line x = position separating sub-cell column ``m - 1`` (left) from
    column ``m`` (right); the normal points from left to right. ``axis='y'`` is the analogous
    horizontal line between sub-cell rows.
    """

    axis: str
    m: int
    position: float
    span: tuple[float, float]


@dataclass(frozen=True, eq=False)
class ElementDualGeometry:
    element: tuple[int, int]
    dual_x: np.ndarray
    dual_y: np.ndarray

    @property
    def k(self) -> int:
        return len(self.dual_x) - 2

    @property
    def alpha_x(self) -> np.ndarray:
        return self.dual_x[1:-1]

    @property
    def alpha_y(self) -> np.ndarray:
        return self.dual_y[1:-1]

    def subcell(self, s: int, t: int) -> tuple[tuple[float, float], tuple[float, float]]:
        """Sub-rectangle (s, t); it belongs to the control volume of local trial node (s, t)."""
        return (
            (float(self.dual_x[s]), float(self.dual_x[s + 1])),
            (float(self.dual_y[t]), float(self.dual_y[t + 1])),
        )

    def subcell_areas(self) -> np.ndarray:
        return np.outer(np.diff(self.dual_x), np.diff(self.dual_y))

    def segments(self) -> list[DualSegment]:
        span_x = (float(self.dual_x[0]), float(self.dual_x[-1]))
        span_y = (float(self.dual_y[0]), float(self.dual_y[-1]))
        out = [DualSegment('x', m, float(self.dual_x[m]), span_y) for m in range(1, self.k + 1)]
        out.extend(DualSegment('y', m, float(self.dual_y[m]), span_x) for m in range(1, self.k + 1))
        return out


def element_dual_geometry(mesh: RectMesh, strategy: DualStrategy, element: tuple[int, int]) -> ElementDualGeometry:
    i, j = mesh._check_element(element)
    xs = np.concatenate(([-1.0], strategy.x.alpha_array, [1.0]))
    ys = np.concatenate(([-1.0], strategy.y.alpha_array, [1.0]))
    dual_x = mesh.x_centers[i - 1] + 0.5 * mesh.hx[i - 1] * xs
    dual_y = mesh.y_centers[j - 1] + 0.5 * mesh.hy[j - 1] * ys
    dual_x[0], dual_x[-1] = mesh.x_coords[i - 1], mesh.x_coords[i]
    dual_y[0], dual_y[-1] = mesh.y_coords[j - 1], mesh.y_coords[j]
    return ElementDualGeometry(element=(i, j), dual_x=dual_x, dual_y=dual_y)


@dataclass(frozen=True, eq=False)
class DofMap:
    k: int
    nx: int
    ny: int
    element_dofs: np.ndarray
    boundary: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.boundary)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def n_interior(self) -> int:
        return int(np.count_nonzero(~self.boundary))

    @property
    def shape(self) -> tuple[int, int]:
        return self.k * self.nx + 1, self.k * self.ny + 1


def global_dof_map(mesh: RectMesh, k: int) -> DofMap:
    """Tensor numbering ``I * (k*ny + 1) + J`` with ``I = k*(i-1) + p`` and ``J = k*(j-1) + q``."""
    if k < 1:
        raise ValueError('k must be >= 1')
    n_i = k * mesh.nx + 1
    n_j = k * mesh.ny + 1
    local = np.arange(k + 1)
    big_i = k * np.arange(mesh.nx)[:, None] + local[None, :]
    big_j = k * np.arange(mesh.ny)[:, None] + local[None, :]
    element_dofs = big_i[:, None, :, None] * n_j + big_j[None, :, None, :]

    grid_i, grid_j = np.meshgrid(np.arange(n_i), np.arange(n_j), indexing='ij')
    boundary = (grid_i == 0) | (grid_i == n_i - 1) | (grid_j == 0) | (grid_j == n_j - 1)
    return DofMap(k=k, nx=mesh.nx, ny=mesh.ny, element_dofs=element_dofs, boundary=boundary.ravel())


def mesh_from_document(raw: Mapping[str, Any]) -> RectMesh:
    c1_bound = float(raw.get('c1_bound', DEFAULT_C1_BOUND))
    if 'x_coords' in raw:
        return RectMesh(np.asarray(raw['x_coords'], dtype=float), np.asarray(raw['y_coords'], dtype=float), c1_bound=c1_bound)
    nx = int(raw['nx'])
    ny = int(raw.get('ny', nx))
    delta = float(raw.get('perturb', 0.0))
    if delta > 0.0:
        return perturbed_mesh(nx, ny, delta, int(raw.get('seed', 0)), c1_bound=c1_bound)
    return uniform_mesh(nx, ny, c1_bound=c1_bound)


def load_mesh(path: Path | str) -> RectMesh:
    return mesh_from_document(load_document(path, MESH_SCHEMA, what='mesh'))

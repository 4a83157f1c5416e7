from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .assembly import DiscreteField, quadrature_points
from .dualscheme import DualStrategy
from .exceptions import ZeroError
from .meshgen import RectMesh
from .pdemodel import ManufacturedProblem
from .refbasis import gauss_rule
from .superstruct import super_points

logger = logging.getLogger(__name__)


class ErrorSampler(Protocol):
    """Error e sampled on a reference tensor grid mapped into every element; arrays of shape (nx, ny, len(xh), len(yh))."""

    def values(self, mesh: RectMesh, xh: np.ndarray, yh: np.ndarray) -> np.ndarray: ...

    def gradient(self, mesh: RectMesh, xh: np.ndarray, yh: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


def _full(values, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(values, dtype=float), shape)


@dataclass(frozen=True)
class ClosureError:
    """Error given directly by closures of (x, y)."""

    value: Callable
    grad_x: Callable
    grad_y: Callable

    def values(self, mesh, xh, yh):
        x, y = mesh.physical_grid(xh, yh)
        return _full(self.value(x, y), x.shape)

    def gradient(self, mesh, xh, yh):
        x, y = mesh.physical_grid(xh, yh)
        return _full(self.grad_x(x, y), x.shape), _full(self.grad_y(x, y), x.shape)


@dataclass(frozen=True)
class ExactError:
    """e = u - u_h for a manufactured problem."""

    field: DiscreteField
    problem: ManufacturedProblem

    def values(self, mesh, xh, yh):
        x, y = mesh.physical_grid(xh, yh)
        return self.problem.u(x, y) - self.field.grid_values(xh, yh)

    def gradient(self, mesh, xh, yh):
        x, y = mesh.physical_grid(xh, yh)
        gx, gy = self.field.grid_gradient(xh, yh)
        return self.problem.u_x(x, y) - gx, self.problem.u_y(x, y) - gy


@dataclass(frozen=True)
class FieldDifference:
    """e = a - b for two discrete fields on the same mesh (either may be broken)."""

    a: DiscreteField
    b: DiscreteField

    def values(self, mesh, xh, yh):
        return self.a.grid_values(xh, yh) - self.b.grid_values(xh, yh)

    def gradient(self, mesh, xh, yh):
        ax, ay = self.a.grid_gradient(xh, yh)
        bx, by = self.b.grid_gradient(xh, yh)
        return ax - bx, ay - by


def norm_h1x_super(error: ErrorSampler, mesh: RectMesh, strategy: DualStrategy) -> float:
    """x-derivative error on the dual lines x = alpha^x, integrated along y."""
    k = strategy.k
    rule = gauss_rule(quadrature_points(k))
    gx, _ = error.gradient(mesh, strategy.x.alpha_array, rule.nodes)
    line_sums = np.einsum('ijsg,g->ij', gx * gx, rule.weights)
    weights = mesh.hx[:, None] * 0.5 * mesh.hy[None, :]
    return math.sqrt(float(np.sum(weights * line_sums)))


def norm_l2_super(error: ErrorSampler, mesh: RectMesh, strategy: DualStrategy) -> float:
    """Function-value error on the (k+1)^2 superconvergence points of each element."""
    k = strategy.k
    e = error.values(mesh, super_points(strategy.x), super_points(strategy.y))
    sums = np.sum(e * e, axis=(2, 3))
    return math.sqrt(float(np.sum(mesh.element_areas() * sums)) / (k + 1) ** 2)


def norm_h1x_ultra(error: ErrorSampler, mesh: RectMesh, strategy: DualStrategy) -> float:
    """x-derivative error on the k(k+1) ultraconvergence points alpha^x x P^S_y of each element."""
    k = strategy.k
    gx, _ = error.gradient(mesh, strategy.x.alpha_array, super_points(strategy.y))
    sums = np.sum(gx * gx, axis=(2, 3))
    return math.sqrt(float(np.sum(mesh.element_areas() * sums)) / (k * (k + 1)))


def _quadrature_sums(error: ErrorSampler, mesh: RectMesh, k: int) -> tuple[float, float]:
    rule = gauss_rule(quadrature_points(k))
    e = error.values(mesh, rule.nodes, rule.nodes)
    gx, gy = error.gradient(mesh, rule.nodes, rule.nodes)
    quarter_area = 0.25 * mesh.element_areas()
    l2 = np.einsum('ijgh,g,h->ij', e * e, rule.weights, rule.weights)
    h1 = np.einsum('ijgh,g,h->ij', gx * gx + gy * gy, rule.weights, rule.weights)
    return float(np.sum(quarter_area * l2)), float(np.sum(quarter_area * h1))


def global_norms(error: ErrorSampler, mesh: RectMesh, k: int) -> tuple[float, float]:
    """(L2 norm, H1 seminorm) by element-wise Gauss quadrature with 2k+3 points per direction."""
    l2, h1 = _quadrature_sums(error, mesh, k)
    return math.sqrt(l2), math.sqrt(h1)


def broken_h1_seminorm(error: ErrorSampler, mesh: RectMesh, k: int) -> float:
    """H1 seminorm summed element by element; the right measure for broken fields."""
    return math.sqrt(_quadrature_sums(error, mesh, k)[1])


@dataclass(frozen=True)
class ErrorReport:
    h: float
    norms: dict[str, float]
    dofs: int
    wall_time: float = 0.0
    h_max: float | None = None
    nx: int | None = None
    ny: int | None = None
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (self.h > 0.0 and math.isfinite(self.h)):
            raise ValueError(f'mesh size must be positive, got {self.h}')
        for name, value in self.norms.items():
            if not math.isfinite(value) or value < 0.0:
                raise ValueError(f'norm {name!r} must be finite and >= 0, got {value}')


def estimate_orders(reports: Sequence[ErrorReport], *, strict: bool = False) -> dict[str, list[float | None]]:
    """Orders log(e1/e2)/log(h1/h2) between consecutive reports, coarse to fine; the first entry is None.

    A norm that is zero or not finite has no order; with ``strict`` it raises ZeroError instead.
    """
    if len(reports) < 2:
        raise ValueError('order estimation needs at least 2 reports')
    ordered = sorted(reports, key=lambda r: -r.h)
    hs = [r.h for r in ordered]
    if len(set(hs)) != len(hs):
        raise ValueError(f'mesh sizes must be distinct: {hs}')

    orders: dict[str, list[float | None]] = {}
    for name in ordered[0].norms:
        sequence: list[float | None] = [None]
        for coarse, fine in zip(ordered, ordered[1:]):
            e1 = coarse.norms.get(name, float('nan'))
            e2 = fine.norms.get(name, float('nan'))
            if not (e1 > 0.0 and e2 > 0.0 and math.isfinite(e1) and math.isfinite(e2)):
                if strict:
                    raise ZeroError(f'norm {name!r} underflowed between h={coarse.h:.6g} and h={fine.h:.6g}')
                logger.warning('norm %s underflowed between h=%.6g and h=%.6g; order omitted', name, coarse.h, fine.h)
                sequence.append(None)
                continue
            sequence.append(math.log(e1 / e2) / math.log(coarse.h / fine.h))
        orders[name] = sequence
    return orders

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .config import SCHEME_SCHEMA, load_document, save_document
from .exceptions import ConfigIssue, ConfigValidationError, NonConvergence, OrderingViolation, UnknownPreset
from .refbasis import gauss_rule

logger = logging.getLogger(__name__)

_NEWTON_MAX_ITER = 50
_NEWTON_TOL = 1e-12
_FD_STEP = 1e-7
_MAX_CONDITION = 1e12
_DOCUMENT_RESIDUAL_TOL = 5e-4


def _ordering_problem(alpha: np.ndarray, a: np.ndarray) -> str | None:
    if len(a) != len(alpha) + 1:
        return f'expected {len(alpha) + 1} interpolation parameters, got {len(a)}'
    if a[0] != -1.0 or a[-1] != 1.0:
        return 'interpolation parameters must start at -1 and end at 1'
    if np.any(np.diff(a) <= 0.0):
        return f'interpolation parameters are not strictly increasing: {a.tolist()}'
    if np.any(alpha <= -1.0) or np.any(alpha >= 1.0):
        return f'dual parameters must lie in (-1, 1): {alpha.tolist()}'
    if np.any(np.diff(alpha) <= 0.0):
        return f'dual parameters are not strictly increasing: {alpha.tolist()}'
    return None


@dataclass(frozen=True)
class DirectionStrategy:
    k: int
    r: int
    alpha: tuple[float, ...]
    a: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, 'alpha', tuple(float(v) for v in self.alpha))
        object.__setattr__(self, 'a', tuple(float(v) for v in self.a))
        if self.k < 1:
            raise ValueError('k must be >= 1')
        if not self.k - 1 <= self.r <= 2 * self.k - 2:
            raise ValueError(f'orthogonality order r={self.r} outside [{self.k - 1}, {2 * self.k - 2}] for k={self.k}')
        if len(self.alpha) != self.k:
            raise ValueError(f'expected {self.k} dual parameters, got {len(self.alpha)}')
        problem = _ordering_problem(self.alpha_array, self.a_array)
        if problem is not None:
            raise OrderingViolation(problem)

    @property
    def alpha_array(self) -> np.ndarray:
        return np.asarray(self.alpha, dtype=float)

    @property
    def a_array(self) -> np.ndarray:
        return np.asarray(self.a, dtype=float)

    @property
    def weights(self) -> np.ndarray:
        """Dual quadrature weights A_s = a_s - a_{s-1}."""
        return np.diff(self.a_array)

    def residual(self) -> np.ndarray:
        return orthogonality_residual(self.alpha, self.a, self.r)

    def with_interpolation_parameters(self, a: Sequence[float]) -> 'DirectionStrategy':
        """Same dual points, new interpolation parameters.

        The FVE system depends on the dual points only, so the result assembles to the same
        matrix; the orthogonality order is carried over without being re-checked.
        """
        return replace(self, a=tuple(a))


@dataclass(frozen=True)
class DualStrategy:
    x: DirectionStrategy
    y: DirectionStrategy
    name: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.x.k != self.y.k:
            raise ValueError(f'direction strategies disagree on k: {self.x.k} != {self.y.k}')

    @property
    def k(self) -> int:
        return self.x.k

    @property
    def r(self) -> int:
        return min(self.x.r, self.y.r)


def orthogonality_residual(alpha: Sequence[float], a: Sequence[float], r: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    a = np.asarray(a, dtype=float)
    if len(a) != len(alpha) + 1:
        raise ValueError(f'expected {len(alpha) + 1} interpolation parameters, got {len(a)}')
    if a[0] != -1.0 or a[-1] != 1.0:
        raise ValueError('interpolation parameters must start at -1 and end at 1')
    if r < 0:
        raise ValueError('r must be >= 0')

    weights = np.diff(a)
    i = np.arange(r + 1)
    moments = (1.0 - (-1.0) ** i) / (i + 2)
    powers = alpha[None, :] ** (i[:, None] + 1)
    return powers @ weights - moments


def _unknowns_to_strategy(z: np.ndarray, k: int, fixed: Mapping[int, float], free: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    a = np.empty(k + 1)
    a[0] = -1.0
    a[k] = 1.0
    for index, value in fixed.items():
        a[index] = value
    for offset, index in enumerate(free):
        a[index] = z[k + offset]
    return z[:k], a


def _fd_jacobian(func, z: np.ndarray) -> np.ndarray:
    columns = []
    for j in range(len(z)):
        step = np.zeros_like(z)
        step[j] = _FD_STEP
        columns.append((func(z + step) - func(z - step)) / (2.0 * _FD_STEP))
    return np.stack(columns, axis=1)


def solve_strategy(
    k: int,
    r: int,
    *,
    fixed: Mapping[int, float],
    alpha_guess: Sequence[float],
    free_guess: Mapping[int, float] | None = None,
) -> DirectionStrategy:
    """Newton-solve the orthogonality condition for the dual parameters and the free interpolation parameters.

    ``fixed`` and ``free_guess`` are keyed by the interior index s in 1..k-1 of a_s; together they must
    cover every interior index exactly once.
    """
    free_guess = dict(free_guess or {})
    interior = set(range(1, k))
    if set(fixed) & set(free_guess):
        raise ValueError('an interpolation parameter cannot be both fixed and free')
    if set(fixed) | set(free_guess) != interior:
        raise ValueError(f'fixed and free interpolation parameters must cover indices {sorted(interior)}')
    free = sorted(free_guess)
    if k + len(free) != r + 1:
        raise ValueError(f'{k} dual + {len(free)} free parameters do not match the {r + 1} equations of order r={r}')
    if len(alpha_guess) != k:
        raise ValueError(f'expected {k} dual parameter guesses, got {len(alpha_guess)}')

    def residual(z: np.ndarray) -> np.ndarray:
        alpha, a = _unknowns_to_strategy(z, k, fixed, free)
        return orthogonality_residual(alpha, a, r)

    z = np.concatenate([np.asarray(alpha_guess, dtype=float), [free_guess[s] for s in free]])
    for iteration in range(_NEWTON_MAX_ITER + 1):
        res = residual(z)
        if not np.all(np.isfinite(res)):
            raise NonConvergence(f'non-finite residual at Newton iteration {iteration} (k={k}, r={r})')
        err = float(np.max(np.abs(res)))
        logger.debug('k=%d r=%d newton iteration %d residual %.3e', k, r, iteration, err)
        if err <= _NEWTON_TOL:
            break
        if iteration == _NEWTON_MAX_ITER:
            raise NonConvergence(f'no convergence after {_NEWTON_MAX_ITER} Newton iterations (k={k}, r={r}, residual {err:.3e})')
        jacobian = _fd_jacobian(residual, z)
        condition = np.linalg.cond(jacobian)
        if not np.isfinite(condition) or condition > _MAX_CONDITION:
            raise NonConvergence(f'Jacobian condition number {condition:.3e} too large (k={k}, r={r})')
        z = z + np.linalg.solve(jacobian, -res)

    alpha, a = _unknowns_to_strategy(z, k, fixed, free)
    problem = _ordering_problem(alpha, a)
    if problem is not None:
        raise OrderingViolation(f'converged strategy (k={k}, r={r}) is not admissible: {problem}')
    return DirectionStrategy(k=k, r=r, alpha=tuple(alpha), a=tuple(a))


@lru_cache(maxsize=None)
def gaussian_duality(k: int) -> DirectionStrategy:
    if not 1 <= k <= 10:
        raise ValueError('k must be in [1, 10]')
    rule = gauss_rule(k)
    a = np.concatenate(([-1.0], -1.0 + np.cumsum(rule.weights)))
    a[-1] = 1.0
    return DirectionStrategy(k=k, r=2 * k - 2, alpha=tuple(rule.nodes), a=tuple(a))


def verify_dual_quadrature(strategy: DirectionStrategy) -> float:
    """Largest error of the dual-point quadrature over the monomials of degree <= r+1."""
    alpha = strategy.alpha_array
    weights = strategy.weights
    worst = 0.0
    for degree in range(strategy.r + 2):
        exact = 2.0 / (degree + 1) if degree % 2 == 0 else 0.0
        worst = max(worst, abs(float(weights @ alpha**degree) - exact))
    return worst


@dataclass(frozen=True)
class _PrintedDirection:
    alpha: tuple[float, ...]
    fixed: dict[int, float]
    free: dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class _PrintedScheme:
    k: int
    r: int
    x: _PrintedDirection | None = None
    y: _PrintedDirection | None = None

    @property
    def gaussian(self) -> bool:
        return self.x is None


# Dual parameters are printed to four digits; free interpolation parameters are seeds.
_PRESETS: dict[str, _PrintedScheme] = {
    'FVE-3-2': _PrintedScheme(
        k=3,
        r=2,
        x=_PrintedDirection(alpha=(-0.6406, -0.0748, 0.6255), fixed={1: -1 / 5, 2: 7 / 50}),
        y=_PrintedDirection(alpha=(-0.7622, -0.2073, 0.6577), fixed={1: -1 / 2, 2: 1 / 5}),
    ),
    'FVE-3-3': _PrintedScheme(
        k=3,
        r=3,
        x=_PrintedDirection(alpha=(-0.8563, -0.1534, 0.7243), fixed={1: -3 / 5}, free={2: 0.3301}),
        y=_PrintedDirection(alpha=(-0.9380, -0.2435, 0.7011), fixed={1: -5 / 7}, free={2: 0.2744}),
    ),
    'FVE-3-4': _PrintedScheme(k=3, r=4),
    'FVE-4-3': _PrintedScheme(
        k=4,
        r=3,
        x=_PrintedDirection(alpha=(-0.9156, -0.2698, 0.5678, 0.8838), fixed={1: -7 / 10, 2: 1 / 5, 3: 4 / 5}),
        y=_PrintedDirection(alpha=(-0.9020, -0.3187, 0.4628, 0.8990), fixed={1: -7 / 10, 2: 1 / 10, 3: 3 / 4}),
    ),
    'FVE-4-4': _PrintedScheme(
        k=4,
        r=4,
        x=_PrintedDirection(alpha=(-0.9579, -0.4479, 0.3699, 0.9093), fixed={1: -4 / 5, 2: -1 / 25}, free={3: 0.7270}),
        y=_PrintedDirection(alpha=(-0.8598, -0.2885, 0.4744, 0.9452), fixed={1: -16 / 25, 2: 1 / 10}, free={3: 0.7960}),
    ),
    'FVE-4-6': _PrintedScheme(k=4, r=6),
}


def preset_names() -> tuple[str, ...]:
    return tuple(_PRESETS)


def _printed(name: str) -> _PrintedScheme:
    try:
        return _PRESETS[name]
    except KeyError:
        raise UnknownPreset(f'unknown preset {name!r}; known presets: {", ".join(_PRESETS)}') from None


def _printed_direction(k: int, r: int, row: _PrintedDirection) -> DirectionStrategy:
    a = [-1.0] + [{**row.fixed, **row.free}[s] for s in range(1, k)] + [1.0]
    return DirectionStrategy(k=k, r=r, alpha=row.alpha, a=tuple(a))


def printed_strategy(name: str) -> DualStrategy:
    """The preset exactly as tabulated, without re-solving."""
    entry = _printed(name)
    if entry.gaussian:
        g = gaussian_duality(entry.k)
        return DualStrategy(x=g, y=g, name=name)
    return DualStrategy(
        x=_printed_direction(entry.k, entry.r, entry.x),
        y=_printed_direction(entry.k, entry.r, entry.y),
        name=name,
    )


@lru_cache(maxsize=None)
def preset(name: str) -> DualStrategy:
    entry = _printed(name)
    if entry.gaussian:
        g = gaussian_duality(entry.k)
        return DualStrategy(x=g, y=g, name=name)

    directions = []
    for row in (entry.x, entry.y):
        directions.append(
            solve_strategy(entry.k, entry.r, fixed=row.fixed, alpha_guess=row.alpha, free_guess=row.free)
        )
    logger.debug('re-solved preset %s', name)
    return DualStrategy(x=directions[0], y=directions[1], name=name)


def _direction_from_document(raw: Mapping[str, Any], *, k: int, r: int, path: str) -> DirectionStrategy:
    alpha = [float(v) for v in raw['alpha']]
    a = [float(v) for v in raw['a']]
    issues: list[ConfigIssue] = []
    if len(alpha) != k:
        issues.append(ConfigIssue(path=f'{path}.alpha', message=f'expected {k} values, got {len(alpha)}'))
    if len(a) != k + 1:
        issues.append(ConfigIssue(path=f'{path}.a', message=f'expected {k + 1} values, got {len(a)}'))
    free = sorted(set(raw.get('free') or []))
    if any(s >= k for s in free):
        issues.append(ConfigIssue(path=f'{path}.free', message=f'free indices must lie in 1..{k - 1}'))
    elif free and k + len(free) != r + 1:
        issues.append(
            ConfigIssue(path=f'{path}.free', message=f'order r={r} needs {r + 1 - k} free parameters for k={k}, got {len(free)}')
        )
    if issues:
        raise ConfigValidationError(issues, what='scheme')

    if not free:
        direction = DirectionStrategy(k=k, r=r, alpha=tuple(alpha), a=tuple(a))
        worst = float(np.max(np.abs(direction.residual())))
        if worst > _DOCUMENT_RESIDUAL_TOL:
            message = f'violates the order r={r} orthogonality condition (max residual {worst:.2e}); list free indices to re-solve'
            raise ConfigValidationError([ConfigIssue(path=f'{path}.alpha', message=message)], what='scheme')
        return direction
    fixed = {s: a[s] for s in range(1, k) if s not in free}
    return solve_strategy(k, r, fixed=fixed, alpha_guess=alpha, free_guess={s: a[s] for s in free})


def scheme_from_document(raw: Mapping[str, Any]) -> DualStrategy:
    k = int(raw['k'])
    r = int(raw['r'])
    if not k - 1 <= r <= 2 * k - 2:
        raise ConfigValidationError([ConfigIssue(path='$.r', message=f'must lie in [{k - 1}, {2 * k - 2}] for k={k}')], what='scheme')
    return DualStrategy(
        x=_direction_from_document(raw['x'], k=k, r=r, path='$.x'),
        y=_direction_from_document(raw['y'], k=k, r=r, path='$.y'),
        name=raw.get('name'),
    )


def load_scheme(path: Path | str) -> DualStrategy:
    """Read a scheme-definition file; directions listing ``free`` indices are re-solved."""
    strategy = scheme_from_document(load_document(path, SCHEME_SCHEMA, what='scheme'))
    if strategy.name is None:
        strategy = replace(strategy, name=Path(path).stem)
    return strategy


def scheme_to_document(strategy: DualStrategy) -> dict[str, Any]:
    document: dict[str, Any] = {}
    if strategy.name:
        document['name'] = strategy.name
    document['k'] = strategy.k
    document['r'] = strategy.r
    for axis in ('x', 'y'):
        direction: DirectionStrategy = getattr(strategy, axis)
        document[axis] = {'alpha': list(direction.alpha), 'a': list(direction.a)}
    return document


def save_scheme(strategy: DualStrategy, path: Path | str) -> None:
    save_document(scheme_to_document(strategy), path, SCHEME_SCHEMA, what='scheme')

from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from fvegrid.assembly import interpolate
from fvegrid.dualscheme import DirectionStrategy, DualStrategy, gaussian_duality, preset, preset_names, solve_strategy
from fvegrid.exceptions import ComplexOrOutOfRangeRoot
from fvegrid.meshgen import map_from_element, map_to_element, perturbed_mesh, uniform_mesh
from fvegrid.pdemodel import get_problem
from fvegrid.refbasis import legendre_eval, lobatto_nodes, mfunction_eval
from fvegrid.superstruct import (
    Mode,
    amd_coefficients,
    amd_super_corrections,
    amd_ultra_corrections,
    build_superclose,
    constraint_residuals,
    edge_jumps,
    mdecompose_element,
    mdecompose_mesh,
    point_sets,
    point_sets_json,
    residual_polynomial,
    super_points,
    superclose_coefficients,
    verify_vanishing_means,
)


def _gauss(k: int) -> DualStrategy:
    return DualStrategy(x=gaussian_duality(k), y=gaussian_duality(k))


def _directions() -> list[tuple[str, DirectionStrategy]]:
    out = []
    for name in preset_names():
        strategy = preset(name)
        out.append((f'{name}/x', strategy.x))
        out.append((f'{name}/y', strategy.y))
    return out


DIRECTIONS = _directions()
IDS = [label for label, _ in DIRECTIONS]
# the residual polynomial of this direction has a complex conjugate pair of roots
COMPLEX_ROOT_LABELS = {'FVE-3-2/x'}
REAL_ROOT_DIRECTIONS = [(label, direction) for label, direction in DIRECTIONS if label not in COMPLEX_ROOT_LABELS]


@pytest.mark.parametrize('k', range(2, 7))
def test_gaussian_duality_needs_no_super_corrections(k: int) -> None:
    direction = gaussian_duality(k)
    assert np.allclose(amd_super_corrections(direction), 0.0, atol=1e-13)
    assert np.allclose(super_points(direction), lobatto_nodes(k), atol=1e-12)


def test_gaussian_duality_k3_points() -> None:
    points = super_points(gaussian_duality(3))
    s = 1.0 / math.sqrt(5.0)
    assert points == pytest.approx([-1.0, -s, s, 1.0], abs=1e-12)

    ultra = amd_ultra_corrections(gaussian_duality(3))
    assert np.max(np.abs(ultra)) > 1e-3
    assert np.max(np.abs(constraint_residuals(gaussian_duality(3), Mode.ULTRA)[:2])) <= 1e-12


def test_k2_closed_forms() -> None:
    direction = solve_strategy(2, 1, fixed={1: 0.1}, alpha_guess=[-0.5, 0.5])
    a1 = direction.alpha[0]
    l2, _ = legendre_eval(2, a1)
    l3, _ = legendre_eval(3, a1)
    assert amd_super_corrections(direction) == pytest.approx([-l2 / a1], rel=1e-12)
    assert amd_ultra_corrections(direction) == pytest.approx([-l3 / a1], rel=1e-12)

    points = super_points(direction)
    assert len(points) == 3
    assert points[0] == -1.0 and points[-1] == 1.0
    assert -1.0 < points[1] < 1.0


def test_k1_has_empty_corrections() -> None:
    coefficients = amd_coefficients(gaussian_duality(1))
    assert coefficients.super_ == () and coefficients.ultra == ()
    assert super_points(gaussian_duality(1)) == pytest.approx([-1.0, 1.0], abs=1e-14)


@pytest.mark.parametrize('label,direction', DIRECTIONS, ids=IDS)
def test_residual_polynomial_vanishes_at_endpoints(label: str, direction: DirectionStrategy) -> None:
    for mode in (Mode.SUPER, Mode.ULTRA):
        poly = residual_polynomial(direction, mode)
        assert np.max(np.abs(poly(np.array([-1.0, 1.0])))) <= 1e-12


@pytest.mark.parametrize('label,direction', DIRECTIONS, ids=IDS)
def test_constraints_hold_at_every_dual_point(label: str, direction: DirectionStrategy) -> None:
    k = direction.k
    residuals = constraint_residuals(direction, Mode.SUPER)
    assert residuals.shape == (k,)
    assert np.max(np.abs(residuals[: k - 1])) <= 1e-12
    # orthogonality of order r >= k - 1 extends the super constraints to m = k
    assert abs(residuals[k - 1]) <= 1e-9

    ultra = constraint_residuals(direction, 'ultra')
    assert np.max(np.abs(ultra[: k - 1])) <= 1e-12
    if direction.r >= k:
        assert abs(ultra[k - 1]) <= 1e-9


@pytest.mark.parametrize('label,direction', REAL_ROOT_DIRECTIONS, ids=[label for label, _ in REAL_ROOT_DIRECTIONS])
def test_super_points_are_real_simple_roots(label: str, direction: DirectionStrategy) -> None:
    points = super_points(direction)
    assert len(points) == direction.k + 1
    assert points[0] == -1.0 and points[-1] == 1.0
    assert np.all(np.diff(points) > 0.0)
    poly = residual_polynomial(direction, Mode.SUPER)
    assert np.max(np.abs(poly(points))) <= 1e-11


@pytest.mark.parametrize('label', sorted(COMPLEX_ROOT_LABELS))
def test_super_points_reject_complex_roots(label: str) -> None:
    direction = dict(DIRECTIONS)[label]
    with pytest.raises(ComplexOrOutOfRangeRoot, match='complex roots'):
        super_points(direction)
    roots = residual_polynomial(direction, Mode.SUPER).roots()
    assert np.sum(np.abs(roots.imag) > 1e-3) == 2


@pytest.mark.parametrize('label,direction', DIRECTIONS, ids=IDS)
def test_correction_systems_are_well_conditioned(label: str, direction: DirectionStrategy) -> None:
    coefficients = amd_coefficients(direction)
    assert coefficients.condition < 1e8
    assert not coefficients.flagged
    assert len(coefficients.super_) == direction.k - 1


def test_tuned_points_can_be_asymmetric() -> None:
    points = super_points(preset('FVE-3-3').x)
    assert np.max(np.abs(points + points[::-1])) > 1e-3


def test_vanishing_means() -> None:
    for k in (2, 3, 4, 5):
        assert verify_vanishing_means(gaussian_duality(k)) <= 1e-12
    assert verify_vanishing_means(preset('FVE-3-3').x) <= 1e-12
    assert verify_vanishing_means(preset('FVE-4-4').y) <= 1e-12
    assert math.isfinite(verify_vanishing_means(preset('FVE-3-2').x))


def test_point_set_counts() -> None:
    sets = point_sets(preset('FVE-3-3'))
    assert sets.k == 3
    assert sets.function_value_grid().shape == (16, 2)
    assert sets.ultra_grid('x').shape == (12, 2)
    assert sets.ultra_grid('y').shape == (12, 2)
    with pytest.raises(ValueError):
        sets.ultra_grid('z')


def test_gaussian_point_sets_are_gauss_by_lobatto() -> None:
    sets = point_sets(_gauss(2))
    grid = sets.ultra_grid('x')
    assert np.allclose(np.unique(grid[:, 0]), [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-14)
    assert np.allclose(np.unique(grid[:, 1]), [-1.0, 0.0, 1.0], atol=1e-12)


def test_point_sets_map_to_physical_element() -> None:
    mesh = uniform_mesh(4, 4)
    mapped = point_sets(_gauss(3)).mapped(mesh, (2, 1))
    assert mapped.shape == (16, 2)
    assert mapped[:, 0].min() == pytest.approx(0.25) and mapped[:, 0].max() == pytest.approx(0.5)
    assert mapped[:, 1].min() == pytest.approx(0.0) and mapped[:, 1].max() == pytest.approx(0.25)


def test_point_sets_json() -> None:
    document = json.loads(point_sets_json(preset('FVE-3-3')))
    assert set(document) == {'alpha_x', 'ps_x', 'alpha_y', 'ps_y'}
    assert len(document['alpha_x']) == 3 and len(document['ps_y']) == 4


def test_point_sets_json_without_real_super_points(caplog: pytest.LogCaptureFixture) -> None:
    strategy = preset('FVE-3-2')
    with pytest.raises(ComplexOrOutOfRangeRoot):
        point_sets_json(strategy)
    with caplog.at_level('WARNING', logger='fvegrid.superstruct'):
        document = json.loads(point_sets_json(strategy, strict=False))
    assert list(document) == ['alpha_x', 'ps_x', 'alpha_y', 'ps_y']
    assert document['ps_x'] is None
    assert len(document['ps_y']) == 4 and document['ps_y'][0] == -1.0
    assert 'no super points in x' in caplog.text


def test_decomposition_of_tensor_m_function() -> None:
    mesh = perturbed_mesh(5, 5, 0.2, 4)
    element = (3, 2)

    def u(x, y):
        xh, yh = map_from_element(mesh, element, (x, y))
        return mfunction_eval(2, xh) * mfunction_eval(3, yh)

    decomposition = mdecompose_element(u, mesh, element, 4)
    expected = np.zeros((5, 5))
    expected[2, 3] = 1.0
    assert np.allclose(decomposition.coefficients, expected, atol=1e-12)


def test_decomposition_of_constant() -> None:
    mesh = uniform_mesh(3, 3)
    b = mdecompose_mesh(lambda x, y: np.ones_like(x), mesh, 3)
    assert b.shape == (3, 3, 4, 4)
    expected = np.zeros((4, 4))
    expected[0, 0] = 1.0
    assert np.allclose(b, expected, atol=1e-13)

    for decompose in (lambda: mdecompose_mesh(np.add, mesh, -1), lambda: mdecompose_element(np.add, mesh, (1, 1), -1)):
        with pytest.raises(ValueError, match='degree'):
            decompose()


def test_decomposition_reproduces_polynomials() -> None:
    mesh = perturbed_mesh(4, 4, 0.25, 9)

    def u(x, y):
        return x**3 * y**2 - 0.5 * x * y**3 + 2.0

    decomposition = mdecompose_element(u, mesh, (2, 3), 3)
    t = np.linspace(-1.0, 1.0, 5)
    x, y = map_to_element(mesh, (2, 3), np.meshgrid(t, t, indexing='ij'))
    assert np.max(np.abs(decomposition(t, t) - u(x, y))) <= 1e-12

    b = mdecompose_mesh(u, mesh, 3)
    assert np.allclose(b[1, 2], decomposition.coefficients, atol=1e-12)


def test_superclose_coefficients_need_enough_degree() -> None:
    with pytest.raises(ValueError):
        superclose_coefficients(np.zeros((4, 4)), preset('FVE-3-3'), Mode.SUPER)
    with pytest.raises(ValueError):
        superclose_coefficients(np.zeros((5, 5)), preset('FVE-3-3'), Mode.ULTRA)


def test_superclose_coefficients_follow_index_sets() -> None:
    b = np.arange(36, dtype=float).reshape(6, 6)
    out = superclose_coefficients(b, _gauss(3), Mode.SUPER)
    assert out.shape == (4, 4)
    assert out[1, 1] == b[1, 1]
    assert out[2, 2] == b[2, 2]
    # s + t > k + 1 is truncated
    assert out[2, 3] == 0.0 and out[3, 3] == 0.0
    # the s <= 1 and t <= 1 strips run up to index k
    assert out[1, 3] == b[1, 3] and out[3, 0] == b[3, 0]

    ultra = superclose_coefficients(b, _gauss(3), Mode.ULTRA)
    assert ultra[2, 3] == b[2, 3]
    assert ultra[3, 3] == 0.0


def test_superclose_applies_separable_corrections() -> None:
    strategy = preset('FVE-3-3')
    b = np.zeros((5, 5))
    b[4, 0] = 1.0
    b[0, 4] = 2.0
    out = superclose_coefficients(b, strategy, Mode.SUPER)
    assert np.allclose(out[2:, 0], -amd_super_corrections(strategy.x), atol=1e-15)
    assert np.allclose(out[0, 2:], -2.0 * amd_super_corrections(strategy.y), atol=1e-15)


def test_superclose_reproduces_members_of_the_index_set() -> None:
    mesh = perturbed_mesh(4, 4, 0.2, 2)
    strategy = preset('FVE-3-3')

    def u(x, y):
        return x**2 * y**2 + x * y

    problem = replace(get_problem('BVP-D'), u=u)
    for mode in (Mode.SUPER, Mode.ULTRA):
        field = build_superclose(problem, mesh, strategy, mode)
        assert field.broken
        for x, y in ((0.13, 0.77), (0.5, 0.5), (0.91, 0.04)):
            assert field.evaluate(x, y) == pytest.approx(u(x, y), abs=1e-12)
        assert edge_jumps(field) <= 1e-12


def test_gaussian_superclose_is_the_truncated_decomposition() -> None:
    mesh = uniform_mesh(3, 3)
    problem = get_problem('BVP-DR')
    strategy = _gauss(2)
    field = build_superclose(problem, mesh, strategy, Mode.SUPER)
    b = mdecompose_mesh(problem.u, mesh, 3)
    nodes = lobatto_nodes(2)
    reference = np.zeros_like(b[..., :3, :3])
    keep = [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2)]
    for s, t in keep:
        reference[..., s, t] = b[..., s, t]
    values = np.einsum(
        'ps,ijst,qt->ijpq',
        np.stack([mfunction_eval(s, nodes) for s in range(3)], axis=1),
        reference,
        np.stack([mfunction_eval(t, nodes) for t in range(3)], axis=1),
    )
    assert np.allclose(field.local_values, values, atol=1e-13)


def test_edge_jumps() -> None:
    mesh = perturbed_mesh(4, 3, 0.2, 6)
    continuous = interpolate(mesh, 3, lambda x, y: np.sin(x) * np.cos(y))
    assert edge_jumps(continuous) <= 1e-13

    problem = get_problem('BVP-DR')
    coarse = edge_jumps(build_superclose(problem, uniform_mesh(4, 4), preset('FVE-3-3'), Mode.SUPER), samples=8)
    fine = edge_jumps(build_superclose(problem, uniform_mesh(8, 8), preset('FVE-3-3'), Mode.SUPER), samples=8)
    assert 0.0 < fine < coarse / 4.0

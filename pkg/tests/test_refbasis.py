from __future__ import annotations

import math

import numpy as np
import pytest
import sympy as sp

from fvegrid.exceptions import BasisError
from fvegrid.refbasis import (
    Polynomial1D,
    gauss_rule,
    lagrange_basis_1d,
    legendre_eval,
    lobatto_nodes,
    mfunction_derivative,
    mfunction_eval,
    trial_basis,
)


def test_legendre_values_and_derivatives() -> None:
    assert legendre_eval(0, 0.37) == (1.0, 0.0)
    assert legendre_eval(2, 1.0) == pytest.approx((1.0, 3.0))
    value, slope = legendre_eval(3, 0.5)
    assert value == pytest.approx(-0.4375, abs=1e-15)
    assert slope == pytest.approx(0.375, abs=1e-15)


def test_legendre_is_bounded_on_reference_interval() -> None:
    x = np.linspace(-1.0, 1.0, 101)
    for n in range(12):
        value, _ = legendre_eval(n, x)
        assert np.max(np.abs(value)) <= 1.0 + 1e-14


def test_legendre_rejects_negative_degree() -> None:
    with pytest.raises(ValueError):
        legendre_eval(-1, 0.0)


def test_mfunction_examples() -> None:
    assert mfunction_eval(2, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert mfunction_eval(2, 0.0) == pytest.approx(-0.5)

    x = sp.Symbol('x')
    expected = sp.diff((x**2 - 1) ** 3, x, 2) / (2**3 * sp.factorial(3))
    assert mfunction_eval(4, 0.3) == pytest.approx(float(expected.subs(x, sp.Rational(3, 10))), abs=1e-14)


@pytest.mark.parametrize('i', range(2, 9))
def test_mfunction_matches_derivative_formula(i: int) -> None:
    x = sp.Symbol('x')
    n = i - 1
    formula = sp.diff((x**2 - 1) ** n, x, n - 1) / (2**n * sp.factorial(n))
    samples = np.linspace(-1.0, 1.0, 17)
    expected = [float(formula.subs(x, sp.nsimplify(s))) for s in samples]
    assert np.allclose(mfunction_eval(i, samples), expected, atol=1e-13)


def test_mfunction_vanishes_at_endpoints() -> None:
    for i in range(2, 9):
        assert abs(mfunction_eval(i, -1.0)) <= 1e-13
        assert abs(mfunction_eval(i, 1.0)) <= 1e-13


def test_mfunction_quasi_orthogonality() -> None:
    rule = gauss_rule(10)
    for i in range(9):
        for j in range(9):
            if i == j or abs(i - j) == 2:
                continue
            inner = rule.integrate(mfunction_eval(i, rule.nodes) * mfunction_eval(j, rule.nodes))
            assert abs(inner) <= 1e-13, (i, j)


def test_mfunction_derivative_is_legendre_through_monomials() -> None:
    samples = np.linspace(-1.0, 1.0, 33)
    for i in range(8):
        coefficients = np.zeros(i + 2)
        coefficients[i + 1] = 1.0
        derivative = Polynomial1D(coefficients, 'mfunction').deriv()
        assert derivative.basis == 'monomial'
        legendre, _ = legendre_eval(i, samples)
        assert np.max(np.abs(derivative(samples) - legendre)) <= 1e-12
        assert np.allclose(mfunction_derivative(i + 1, samples), legendre, atol=1e-14)


def test_polynomial_basis_conversions_round_trip() -> None:
    rng = np.random.default_rng(7)
    for degree in (0, 3, 8, 12):
        p = Polynomial1D(rng.normal(size=degree + 1), 'mfunction')
        back = p.to('legendre').to('mfunction')
        assert np.allclose(back.coefficients, p.coefficients, rtol=1e-12, atol=1e-14)
        through_monomials = p.to('monomial').to('mfunction')
        assert np.allclose(through_monomials.coefficients, p.coefficients, rtol=1e-12, atol=1e-10)


def test_polynomial_integral_and_roots() -> None:
    p = Polynomial1D([-0.25, 0.0, 1.0])
    assert p.integral() == pytest.approx(2.0 / 3.0 - 0.5)
    assert np.allclose(np.sort(p.roots().real), [-0.5, 0.5])
    assert Polynomial1D([3.0]).roots().size == 0


def test_polynomial_rejects_unknown_basis() -> None:
    with pytest.raises(ValueError):
        Polynomial1D([1.0], 'chebyshev')


def test_gauss_rule_examples() -> None:
    one = gauss_rule(1)
    assert np.allclose(one.nodes, [0.0]) and np.allclose(one.weights, [2.0])

    three = gauss_rule(3)
    assert np.allclose(three.nodes, [-math.sqrt(0.6), 0.0, math.sqrt(0.6)], atol=1e-15)
    assert np.allclose(three.weights, [5 / 9, 8 / 9, 5 / 9], atol=1e-15)

    four = gauss_rule(4)
    inner = math.sqrt((15 - 2 * math.sqrt(30)) / 35)
    outer = math.sqrt((15 + 2 * math.sqrt(30)) / 35)
    assert np.allclose(four.nodes, [-outer, -inner, inner, outer], atol=1e-15)


@pytest.mark.parametrize('n', [1, 2, 5, 10, 20])
def test_gauss_rule_exactness(n: int) -> None:
    rule = gauss_rule(n)
    assert rule.exactness_degree == 2 * n - 1
    assert abs(rule.weights.sum() - 2.0) <= 1e-14
    assert abs(rule.integrate(rule.nodes ** (2 * n - 1))) <= 1e-13
    assert rule.integrate(rule.nodes ** (2 * n - 2)) == pytest.approx(2.0 / (2 * n - 1), rel=1e-13)


def test_gauss_rule_rejects_out_of_range_sizes() -> None:
    with pytest.raises(ValueError):
        gauss_rule(0)
    with pytest.raises(ValueError):
        gauss_rule(21)


def test_gauss_rule_on_intervals() -> None:
    rule = gauss_rule(3)
    points, weights = rule.on_intervals(np.array([0.0, 1.0]), np.array([1.0, 3.0]))
    assert points.shape == (2, 3)
    assert np.allclose(weights.sum(axis=-1), [1.0, 2.0])
    assert np.sum(weights[1] * points[1] ** 2) == pytest.approx((27.0 - 1.0) / 3.0)


def test_lobatto_nodes() -> None:
    assert np.allclose(lobatto_nodes(1), [-1.0, 1.0])
    assert np.allclose(lobatto_nodes(2), [-1.0, 0.0, 1.0])
    assert np.allclose(lobatto_nodes(3), [-1.0, -1 / math.sqrt(5), 1 / math.sqrt(5), 1.0], atol=1e-15)


def test_lagrange_basis_examples() -> None:
    x = np.linspace(-1.0, 1.0, 9)
    linear = lagrange_basis_1d(1, [-1.0, 1.0])
    assert np.allclose(linear.values(x)[:, 0], (1.0 - x) / 2.0)

    quadratic = lagrange_basis_1d(2, [-1.0, 0.0, 1.0])
    assert np.allclose(quadratic.values(x)[:, 1], 1.0 - x * x)
    assert np.allclose(quadratic.derivatives(x)[:, 1], -2.0 * x)

    cubic = trial_basis(3)
    assert cubic.values(0.42).sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(cubic.values(cubic.nodes), np.eye(4), atol=1e-15)
    assert abs(cubic.derivatives(0.42).sum()) <= 1e-13


@pytest.mark.parametrize(
    'nodes',
    [
        [-1.0, 0.0, 0.0, 1.0],
        [-1.0, 0.5, 0.0, 1.0],
        [-0.9, -0.2, 0.2, 1.0],
        [-1.0, 0.0, 1.0],
    ],
)
def test_lagrange_basis_rejects_bad_nodes(nodes: list[float]) -> None:
    with pytest.raises(BasisError):
        lagrange_basis_1d(3, nodes)

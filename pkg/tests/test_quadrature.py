import math

import numpy as np
import pytest

from vvpflow.quadrature import MAX_DEGREE, quadrature


def monomial_integral(a, b):
    # closed form over the reference triangle: a! b! / (a + b + 2)!
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def test_degree_one_integrates_area():
    rule = quadrature(1)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)


def test_degree_two_integrates_linears():
    rule = quadrature(2)
    x, y = rule.points[:, 0], rule.points[:, 1]
    assert (rule.weights * (x + y)).sum() == pytest.approx(1.0 / 3.0, abs=1e-15)


def test_degree_four_integrates_x2y2():
    rule = quadrature(4)
    x, y = rule.points[:, 0], rule.points[:, 1]
    assert (rule.weights * x**2 * y**2).sum() == pytest.approx(1.0 / 180.0, abs=1e-16)
    assert monomial_integral(2, 2) == pytest.approx(1.0 / 180.0)


@pytest.mark.parametrize("degree", list(range(0, 13)))
def test_exactness_up_to_degree(degree):
    rule = quadrature(degree)
    x, y = rule.points[:, 0], rule.points[:, 1]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            value = (rule.weights * x**a * y**b).sum()
            assert abs(value - monomial_integral(a, b)) <= 1e-14


@pytest.mark.parametrize("degree", [1, 3, 6, 8, 11])
def test_weights_positive_and_points_inside(degree):
    rule = quadrature(degree)
    assert np.all(rule.weights > 0)
    lam0 = 1.0 - rule.points.sum(axis=1)
    assert np.all(rule.points >= -1e-15)
    assert np.all(lam0 >= -1e-15)


@pytest.mark.parametrize("degree", [2, 5, 8])
def test_full_symmetry(degree):
    rule = quadrature(degree)
    lam = np.column_stack([1.0 - rule.points.sum(axis=1), rule.points])
    key = {tuple(np.round(sorted(l), 12)): w for l, w in zip(lam, rule.weights)}
    for l, w in zip(lam, rule.weights):
        for perm in ((0, 2, 1), (1, 0, 2), (2, 1, 0), (1, 2, 0), (2, 0, 1)):
            assert key[tuple(np.round(sorted(l[list(perm)]), 12))] == pytest.approx(w, rel=1e-12)


def test_unsupported_degree():
    with pytest.raises(ValueError):
        quadrature(-1)
    with pytest.raises(ValueError):
        quadrature(MAX_DEGREE + 1)


def test_rules_are_cached_and_immutable():
    a = quadrature(5)
    b = quadrature(5)
    assert a is b
    with pytest.raises(ValueError):
        a.points[0, 0] = 0.0

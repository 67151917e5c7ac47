import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonstat_pm.maps import apply_map, inverse_branches, iterate, map_derivative

alphas = st.floats(0.0, 0.99)
points = st.floats(0.0, 1.0)


def test_neutral_fixed_point():
    for a in (0.0, 0.1, 0.3, 0.9):
        assert apply_map(a, 0.0) == 0.0


def test_right_branch_is_linear():
    assert apply_map(0.37, 0.75) == 0.5
    assert apply_map(0.2, 0.5) == 0.0


def test_left_branch_value(oracle):
    assert apply_map(0.5, 0.25) == pytest.approx(oracle["pm_apply_0.5_0.25"], abs=1e-15)


def test_derivative_values(oracle):
    assert map_derivative(0.3, 0.0) == 1.0
    assert map_derivative(0.2, 0.9) == 2.0
    assert map_derivative(0.2, 0.5) == 2.0
    assert map_derivative(0.5, 0.25) == pytest.approx(oracle["pm_deriv_0.5_0.25"], abs=1e-14)


def test_inverse_branch_values(oracle):
    assert inverse_branches(0.25, 0.0) == (0.0, 0.5)
    left, right = inverse_branches(0.0, 0.6)
    assert left == pytest.approx(0.3, abs=1e-15) and right == pytest.approx(0.8, abs=1e-15)
    left, right = inverse_branches(0.5, oracle["pm_apply_0.5_0.25"])
    assert left == pytest.approx(oracle["pm_inverse_0.5"][0], abs=1e-14)
    assert right == pytest.approx(oracle["pm_inverse_0.5"][1], abs=1e-15)


def test_iterate():
    assert iterate([], 0.3) == 0.3
    assert iterate([0.0, 0.0], 0.3) == pytest.approx(0.2, abs=1e-15)
    assert iterate([0.5], 0.25) == apply_map(0.5, 0.25)


def test_domain_errors():
    with pytest.raises(ValueError):
        apply_map(0.1, 1.5)
    with pytest.raises(ValueError):
        apply_map(0.1, -0.1)
    with pytest.raises(ValueError):
        apply_map(1.0, 0.3)
    with pytest.raises(ValueError):
        map_derivative(0.1, np.nan)


def test_array_inputs_keep_shape():
    x = np.linspace(0, 1, 12).reshape(3, 4)
    assert apply_map(0.2, x).shape == (3, 4)
    assert map_derivative(0.2, x).shape == (3, 4)


@pytest.mark.parametrize("alpha", [0.0, 0.1, 0.25, 0.33])
def test_inverse_roundtrip_grid(alpha):
    x = np.linspace(0.0, 1.0, 10_000)
    left, right = inverse_branches(alpha, x)
    assert np.all((left >= 0) & (left <= 0.5))
    assert np.max(np.abs(apply_map(alpha, left[left < 0.5]) - x[left < 0.5])) < 1e-12
    assert np.max(np.abs(apply_map(alpha, right) - x)) < 1e-12


def test_doubling_is_exact():
    x = np.random.default_rng(1).random(10_000)
    assert np.array_equal(apply_map(0.0, x), np.mod(2 * x, 1.0))


@settings(max_examples=200, deadline=None)
@given(alphas, points, points)
def test_monotone_on_each_branch(alpha, x, y):
    lo, hi = min(x, y), max(x, y)
    if (lo < 0.5) == (hi < 0.5):
        assert apply_map(alpha, lo) <= apply_map(alpha, hi)


@settings(max_examples=200, deadline=None)
@given(alphas, st.floats(0.0, 0.4999999))
def test_left_branch_dominates_identity(alpha, x):
    assert apply_map(alpha, x) >= x


@settings(max_examples=200, deadline=None)
@given(alphas, points)
def test_derivative_at_least_one(alpha, x):
    d = map_derivative(alpha, x)
    assert d >= 1.0
    # strict above 1 wherever the increment 2^a(1+a)x^a is representable next to 1
    if alpha == 0.0 or (x > 0 and x**alpha > 1e-15) or x >= 0.5:
        assert d > 1.0


@settings(max_examples=200, deadline=None)
@given(alphas, points)
def test_inverse_roundtrip_property(alpha, x):
    left, right = inverse_branches(alpha, x)
    if left < 0.5:
        assert abs(apply_map(alpha, left) - x) < 1e-12
    assert abs(apply_map(alpha, right) - x) < 1e-12

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from issf_margins.comparison import (
    BUILTIN_GAMMAS, ComparisonError, ComparisonFunction, DomainError, FunctionClass,
    IllPosedTransformError, InvalidParameterError, invert_monotone, lf_scaled, lf_transform,
    make_cosh, make_linear_ek, make_linear_k, make_power, make_quadratic, make_quartic_sum,
    scale, young_gap,
)

from oracles import conjugate_by_quadrature, conjugate_by_sup


def test_linear_ek_values():
    a = make_linear_ek(1.0)
    assert a(0.5) == 0.5
    assert a(0.0) == 0.0
    assert make_linear_ek(2.0).inv(3.0) == 1.5
    assert a.kind is FunctionClass.EXTENDED_K_INF
    assert a(-4.0) == -4.0


@pytest.mark.parametrize("slope", [0.0, -1.0])
def test_linear_ek_rejects_bad_slope(slope):
    with pytest.raises(InvalidParameterError):
        make_linear_ek(slope)


@pytest.mark.parametrize("name", sorted(BUILTIN_GAMMAS))
def test_builtins_pass_class_checks(name):
    BUILTIN_GAMMAS[name]().check()


def test_check_catches_nonzero_origin_and_decrease():
    bad = ComparisonFunction(FunctionClass.K, eval=lambda s: np.asarray(s, dtype=float) + 1.0)
    with pytest.raises(ComparisonError):
        bad.check()
    dec = ComparisonFunction(FunctionClass.K, eval=lambda s: -np.asarray(s, dtype=float))
    with pytest.raises(ComparisonError):
        dec.check()


def test_check_catches_bounded_kinf():
    sat = ComparisonFunction(FunctionClass.K_INF, eval=lambda s: s / (1.0 + s))
    with pytest.raises(ComparisonError):
        sat.check()
    # same function declared class K is fine
    ComparisonFunction(FunctionClass.K, eval=lambda s: s / (1.0 + s)).check()
    ComparisonFunction(FunctionClass.K_INF, eval=np.log1p).check()


def test_check_catches_wrong_derivative():
    bad = ComparisonFunction(FunctionClass.K_INF, eval=lambda s: np.square(s),
                             deriv=lambda s: np.asarray(s, dtype=float))
    with pytest.raises(ComparisonError):
        bad.check()


def test_numeric_inverse_matches_analytic():
    g = make_quadratic(0.5)
    numeric = ComparisonFunction(FunctionClass.K_INF, eval=g.eval)
    y = np.array([0.0, 0.125, 2.0, 50.0])
    np.testing.assert_allclose(numeric.inv(y), g.inv(y), atol=1e-10)


def test_extended_numeric_inverse_on_negative_values():
    odd_cube = ComparisonFunction(FunctionClass.EXTENDED_K_INF, eval=lambda s: np.power(s, 3))
    np.testing.assert_allclose(odd_cube.inv(np.array([-8.0, 27.0])), [-2.0, 3.0], atol=1e-10)
    k = ComparisonFunction(FunctionClass.K_INF, eval=lambda s: np.power(s, 3))
    with pytest.raises(DomainError):
        k.inv(-1.0)


def test_invert_monotone_far_target():
    assert invert_monotone(lambda s: s, 1e6) == pytest.approx(1e6, abs=1e-9)


def test_self_dual_quadratic():
    lf = lf_transform(make_quadratic(0.5))
    r = np.array([0.0, 0.3, 1.0, 7.0])
    np.testing.assert_allclose(lf(r), r ** 2 / 2, rtol=1e-14)


def test_transform_of_square_at_two():
    # oracle: int_0^2 (s/2) ds
    oracle = conjugate_by_quadrature(lambda s: s / 2.0, 2.0)
    assert oracle == pytest.approx(1.0, abs=1e-12)
    assert lf_transform(make_quadratic(1.0))(2.0) == pytest.approx(oracle, rel=1e-12)


def test_double_transform_is_identity_at_1p7():
    lf = lf_transform(make_quadratic(0.5))
    llf = lf_transform(lf.as_comparison())
    assert llf(1.7) == pytest.approx(1.445, rel=1e-9)


@pytest.mark.parametrize("name", sorted(BUILTIN_GAMMAS))
@pytest.mark.parametrize("r", [0.1, 1.0, 10.0])
def test_involution(name, r):
    g = BUILTIN_GAMMAS[name]()
    llf = lf_transform(lf_transform(g).as_comparison())
    assert llf(r) == pytest.approx(float(g(r)), rel=1e-6)


@pytest.mark.parametrize("name", sorted(BUILTIN_GAMMAS))
def test_transform_class_preservation(name):
    lf = lf_transform(BUILTIN_GAMMAS[name]())
    r = np.geomspace(1e-3, 1e3, 80)
    v = lf(r)
    assert lf(0.0) == 0.0
    assert np.all(np.diff(v) > 0)
    assert lf(1e3) > 1e3 * lf(1.0) / 2


@pytest.mark.parametrize("name", sorted(BUILTIN_GAMMAS))
@pytest.mark.parametrize("r", [0.05, 0.8, 3.0])
def test_transform_matches_quadrature_and_sup(name, r):
    g = BUILTIN_GAMMAS[name]()
    lf = lf_transform(g)
    quad_val = conjugate_by_quadrature(lambda s: float(lf.deriv_inverse(s)), r)
    assert float(lf(r)) == pytest.approx(quad_val, rel=1e-8, abs=1e-12)
    assert float(lf(r)) == pytest.approx(conjugate_by_sup(g, r, hi=10.0), rel=1e-6, abs=1e-10)


def test_numeric_path_matches_closed_form():
    g = make_quadratic(0.5)
    r = np.array([0.0, 1e-3, 0.5, 2.0, 40.0])
    np.testing.assert_allclose(lf_transform(g, numeric=True)(r), lf_transform(g)(r), rtol=1e-8, atol=1e-14)


def test_quartic_sum_uses_bisection():
    lf = lf_transform(make_quartic_sum())
    assert lf.numeric
    # gamma'(p) = p + p^3 = 2 at p = 1 so l(2) = 2 - 0.75
    assert lf(2.0) == pytest.approx(1.25, rel=1e-10)


def test_transform_rejects_negative_argument():
    with pytest.raises(DomainError):
        lf_transform(make_quadratic(1.0))(-0.1)


def test_transform_rejects_ill_posed_gamma():
    with pytest.raises(IllPosedTransformError):
        lf_transform(make_linear_k(1.0))  # derivative constant, not K-infinity
    with pytest.raises(IllPosedTransformError):
        lf_transform(make_linear_ek(1.0))


def test_lf_scaled_examples():
    g = make_quadratic(0.5)
    assert lf_scaled(g, 2.0, 2.0) == pytest.approx(1.0, rel=1e-12)
    assert lf_scaled(g, 4.0, 0.0) == 0.0
    for r in (0.2, 3.0):
        assert lf_scaled(g, 1.0, r) == pytest.approx(lf_transform(g)(r))
    with pytest.raises(InvalidParameterError):
        lf_scaled(g, 0.0, 1.0)


@pytest.mark.parametrize("name", sorted(BUILTIN_GAMMAS))
@pytest.mark.parametrize("a", [0.3, 2.0, 7.5])
def test_lf_scaled_agrees_with_direct_transform(name, a):
    g = BUILTIN_GAMMAS[name]()
    direct = lf_transform(scale(g, a), numeric=True)
    for r in (0.1, 1.0, 5.0):
        assert lf_scaled(g, a, r) == pytest.approx(float(direct(r)), rel=1e-8)


def test_young_gap_examples():
    g = make_quadratic(0.5)
    assert young_gap(g, [1, 0], [1, 0]) == pytest.approx(0.0, abs=1e-15)
    assert young_gap(g, [1, 0], [0, 1]) == pytest.approx(1.0)
    assert young_gap(g, [0, 0], [0, 0]) == 0.0
    with pytest.raises(ValueError):
        young_gap(g, [1, 0], [1, 0, 0])


@pytest.mark.parametrize("name", sorted(BUILTIN_GAMMAS))
def test_young_inequality_random_pairs(name):
    g = BUILTIN_GAMMAS[name]()
    rng = np.random.default_rng(11)
    xs = rng.normal(size=(1000, 3)) * rng.uniform(0.01, 3, size=(1000, 1))
    ys = rng.normal(size=(1000, 3)) * rng.uniform(0.01, 3, size=(1000, 1))
    gaps = [young_gap(g, x, y) for x, y in zip(xs, ys)]
    assert min(gaps) >= -1e-9


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(BUILTIN_GAMMAS)),
       st.lists(st.floats(-3, 3, allow_nan=False), min_size=2, max_size=2).filter(lambda v: np.hypot(*v) > 1e-3))
def test_young_equality_case(name, x):
    g = BUILTIN_GAMMAS[name]()
    x = np.array(x)
    n = np.linalg.norm(x)
    y = float(g.derivative(n)) * x / n
    assert young_gap(g, x, y) == pytest.approx(0.0, abs=1e-7 * max(1.0, float(g(n))))


def test_power_conjugate_closed_form():
    # conjugate of s^p/p is r^q/q with 1/p + 1/q = 1
    p = 3.0
    q = p / (p - 1)
    lf = lf_transform(make_power(p))
    for r in (0.5, 2.0):
        assert lf(r) == pytest.approx(r ** q / q, rel=1e-12)


def test_cosh_conjugate_closed_form():
    lf = lf_transform(make_cosh())
    r = 1.5
    assert lf(r) == pytest.approx(r * np.arcsinh(r) - np.sqrt(1 + r * r) + 1, rel=1e-12)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from issf_margins.comparison import make_linear_ek, make_linear_k, make_quadratic
from issf_margins.filters import (
    ConfigurationError, DegenerateAugmentationError, FilterKind, FilterSpec, InfeasibleFilterError,
    InvalidRError, cbf_qp, compute_terms, evaluate, improved_filter, improved_r_inv, inverse_optimal,
    sontag,
)
from issf_margins.plant import BarrierCandidate, ControlAffinePlant, lie_derivatives
from issf_margins.scenarios import REGISTRY, get_scenario

from oracles import example2_improved_max

ONES = lambda x: np.ones(x.shape + (1,))  # noqa: E731


def _const_drift(c, g2=ONES, dist=False):
    return ControlAffinePlant(1, 1 if dist else 0, 1, f=lambda x: np.full_like(x, c),
                              g1=ONES if dist else None, g2=g2)


H_X = BarrierCandidate(h=lambda x: x[..., 0], grad_h=lambda x: np.ones_like(x), alpha=make_linear_ek(1.0),
                       gamma=make_quadratic(0.5), rho=make_linear_k(1.0))


def _states(sc, n=1000, seed=0):
    return sc.box.low_discrepancy(n, seed=seed)


# ---------------------------------------------------------------- examples

def test_cbf_qp_hand_example():
    out = cbf_qp(_const_drift(-2.0), H_X, np.array([0.5]), np.array([0.0]))
    assert float(out.omega) == pytest.approx(-1.5)
    assert out.override.tolist() == [1.5]
    assert out.u_total.tolist() == [1.5]


def test_inverse_optimal_hand_example():
    out = inverse_optimal(_const_drift(-2.0), H_X, np.array([0.5]), np.array([0.0]))
    assert out.u_total.tolist() == [3.0]


def test_cbf_qp_nominal_already_safe():
    out = cbf_qp(_const_drift(3.0), H_X, np.array([0.5]), np.array([0.7]))
    assert out.override.tolist() == [0.0]
    assert out.u_total.tolist() == [0.7]


@pytest.mark.parametrize("name,k,c", [("example2", 10.1, 1.0), ("example3", -10.1, -1.0)])
def test_standard_filters_leave_nominal_untouched(name, k, c):
    sc = get_scenario(name)
    x = np.linspace(-2, 2, 81)[:, None]
    u0 = sc.nominal(x)
    for fn in (cbf_qp, inverse_optimal):
        out = fn(sc.plant, sc.barrier, x, u0)
        np.testing.assert_allclose(out.omega, 0.0, atol=1e-12)
        np.testing.assert_allclose(out.override, 0.0, atol=1e-12)
        np.testing.assert_allclose(out.u_total[:, 0], k * x[:, 0] + c, atol=1e-12)


def test_sontag_examples():
    out = sontag(_const_drift(0.0), H_X, np.array([0.0]), np.array([0.0]))
    assert float(out.omega) == 0.0
    assert out.override.tolist() == [1.0]
    zero_g2 = _const_drift(-5.0, g2=lambda x: np.zeros(x.shape + (1,)))
    assert sontag(zero_g2, H_X, np.array([0.3]), np.array([0.0])).override.tolist() == [0.0]


def test_sontag_interior_omega_drops_rho_term():
    sc = get_scenario("example3")
    x = np.array([[0.7]])
    out = sontag(sc.plant, sc.barrier, x, sc.nominal(x))
    lie = lie_derivatives(sc.plant, sc.barrier, x)
    expected = lie.Lf + lie.Lg2[:, 0] * sc.nominal(x)[:, 0] + 0.7
    np.testing.assert_allclose(out.omega, expected, atol=1e-12)


def test_sontag_stable_for_large_omega():
    out = sontag(_const_drift(1e10), H_X, np.array([0.0]), np.array([0.0]))
    assert float(out.override[0]) == pytest.approx(0.5e-10, rel=1e-9)


def test_improved_r_inv_examples():
    ex2 = get_scenario("example2_revisited")
    x = np.array([1.0])
    assert improved_r_inv(ex2.plant, ex2.barrier, x, ex2.nominal(x), 0.0) == pytest.approx(11.1)
    ex3 = get_scenario("example3_revisited")
    x0 = np.array([0.0])
    assert improved_r_inv(ex3.plant, ex3.barrier, x0, ex3.nominal(x0), 0.25) == pytest.approx(1.25)
    # both max terms negative: drift -1 - x, nominal -1 at x = 0
    plant = ControlAffinePlant(1, 0, 1, f=lambda x: -1.0 - x, g1=None, g2=ONES)
    assert improved_r_inv(plant, H_X, x0, np.array([-1.0]), 0.4) == pytest.approx(0.4)


def test_improved_filter_unsafe_drift_examples():
    sc = get_scenario("example2_revisited")
    for x, expected in ((1.0, 33.3), (-1.0, 11.1)):
        xs = np.array([x])
        out = improved_filter(sc.plant, sc.barrier, xs, sc.nominal(xs))
        assert float(out.u_total[0]) == pytest.approx(expected, rel=1e-12)


def test_improved_filter_matches_piecewise_max_closed_form():
    sc = get_scenario("example2_revisited")
    x = np.linspace(-2, 2, 401)[:, None]
    out = improved_filter(sc.plant, sc.barrier, x, sc.nominal(x))
    np.testing.assert_allclose(out.u_total[:, 0], example2_improved_max(x[:, 0]), atol=1e-12)


def test_improved_filter_safe_drift_at_origin():
    # u0 = -1 and the augmentation max(L_f h, 0) = 1 doubles to 2, so u = 1
    sc = get_scenario("example3_revisited")
    out = improved_filter(sc.plant, sc.barrier, np.array([0.0]), np.array([-1.0]))
    assert float(out.u_total[0]) == pytest.approx(1.0)


def test_improved_filter_safe_drift_positive_branch():
    sc = get_scenario("example3_revisited")
    x = np.linspace(0.0, 2.0, 41)[:, None]
    out = improved_filter(sc.plant, sc.barrier, x, sc.nominal(x))
    np.testing.assert_allclose(out.u_total[:, 0], 8.1 * x[:, 0] + 1.0, atol=1e-12)


def test_improved_filter_rejects_unknown_variant():
    sc = get_scenario("example2_revisited")
    with pytest.raises(ConfigurationError):
        improved_filter(sc.plant, sc.barrier, np.array([0.0]), np.array([0.0]), variant="other")


# ---------------------------------------------------------------- degenerate set and errors

def test_degenerate_feasible_gives_zero_override():
    plant = _const_drift(1.0, g2=lambda x: x[..., None] * 1.0)
    out = cbf_qp(plant, H_X, np.array([0.0]), np.array([0.0]))
    assert out.override.tolist() == [0.0]
    assert bool(out.degenerate)


def test_degenerate_infeasible_raises():
    plant = _const_drift(-1.0, g2=lambda x: x[..., None] * 1.0)
    with pytest.raises(InfeasibleFilterError) as info:
        cbf_qp(plant, H_X, np.array([0.0]), np.array([0.0]))
    assert info.value.x is not None


def test_degenerate_augmentation_raises():
    plant = _const_drift(1.0, g2=lambda x: x[..., None] * 1.0)
    with pytest.raises(DegenerateAugmentationError):
        improved_filter(plant, H_X, np.array([0.0]), np.array([0.0]))
    with pytest.raises(DegenerateAugmentationError):
        improved_r_inv(plant, H_X, np.array([0.0]), np.array([0.0]), 0.0)


def test_compute_terms_flags_faults_without_raising():
    plant = _const_drift(-1.0, g2=lambda x: x[..., None] * 1.0)
    spec = FilterSpec(FilterKind.CBF_QP, H_X)
    terms = compute_terms(spec, plant, np.array([[0.0], [1.0]]), np.zeros((2, 1)))
    assert terms.fault.tolist() == [True, False]
    assert terms.fault_kind is InfeasibleFilterError


def test_user_r_inv_scalar_and_matrix():
    disk = get_scenario("disk2d")
    x = np.array([0.3, 0.4])
    out = inverse_optimal(disk.plant, disk.barrier, x, np.zeros(2), r_inv=0.5)
    np.testing.assert_allclose(out.override, 2 * 0.5 * (-2 * x))
    mat = np.array([[2.0, 0.0], [0.0, 1.0]])
    out = inverse_optimal(disk.plant, disk.barrier, x, np.zeros(2), r_inv=mat)
    np.testing.assert_allclose(out.override, 2 * mat @ (-2 * x))
    assert float(out.r_inv_quadratic) == pytest.approx((-2 * x) @ mat @ (-2 * x))
    with pytest.raises(InvalidRError):
        inverse_optimal(disk.plant, disk.barrier, x, np.zeros(2), r_inv=np.diag([1.0, -1.0]))
    with pytest.raises(InvalidRError):
        inverse_optimal(disk.plant, disk.barrier, x, np.zeros(2), r_inv=-1.0)


def test_filter_spec_configuration_errors():
    bare = BarrierCandidate(h=H_X.h, grad_h=H_X.grad_h, alpha=make_linear_ek(1.0))
    with pytest.raises(ConfigurationError):
        FilterSpec(FilterKind.IMPROVED_ISSF, bare)
    with pytest.raises(ConfigurationError):
        FilterSpec(FilterKind.CBF_QP, bare, uses_gamma=True)
    with pytest.raises(ConfigurationError):
        FilterSpec(FilterKind.SONTAG, bare)
    with pytest.raises(ConfigurationError):
        FilterSpec(FilterKind.CBF_QP, H_X, r_inv=lambda x, u: 1.0)
    assert FilterSpec(FilterKind.IMPROVED_ISSF, H_X).attenuates
    assert not FilterSpec(FilterKind.IMPROVED_ZERO_DIST, H_X, uses_gamma=True).attenuates


def test_single_and_batch_agree():
    sc = get_scenario("disk2d")
    xs = _states(sc, 20)
    for kind in FilterKind:
        spec = FilterSpec(kind, sc.barrier)
        batch = evaluate(spec, sc.plant, xs, sc.nominal(xs)).u_total
        single = np.array([evaluate(spec, sc.plant, x, sc.nominal(x)).u_total for x in xs])
        np.testing.assert_allclose(batch, single, rtol=1e-14, atol=1e-14)


# ---------------------------------------------------------------- invariants

@pytest.mark.parametrize("name", sorted(REGISTRY))
@pytest.mark.parametrize("uses_gamma", [False, True])
def test_doubling_identity(name, uses_gamma):
    sc = get_scenario(name)
    x = _states(sc)
    u0 = sc.nominal(x)
    qp = cbf_qp(sc.plant, sc.barrier, x, u0, uses_gamma=uses_gamma)
    io = inverse_optimal(sc.plant, sc.barrier, x, u0, uses_gamma=uses_gamma)
    np.testing.assert_array_equal(io.override, 2 * qp.override)


@pytest.mark.parametrize("name", sorted(REGISTRY))
@pytest.mark.parametrize("uses_gamma", [False, True])
def test_cbf_qp_constraint_holds(name, uses_gamma):
    sc = get_scenario(name)
    x = _states(sc, seed=1)
    spec = FilterSpec(FilterKind.CBF_QP, sc.barrier, uses_gamma)
    t = compute_terms(spec, sc.plant, x, sc.nominal(x))
    lhs = t.Lf - t.attenuation + np.sum(t.Lg2 * t.output.u_total, axis=-1) + sc.barrier.alpha(t.h)
    assert np.min(lhs[~t.output.degenerate]) >= -1e-9
    active = t.output.omega < 0
    np.testing.assert_allclose(lhs[active], 0.0, atol=1e-9)


@pytest.mark.parametrize("name", sorted(REGISTRY))
@pytest.mark.parametrize("kind", list(FilterKind))
def test_override_is_parallel_to_lg2h(name, kind):
    sc = get_scenario(name)
    x = _states(sc, 200, seed=2)
    t = compute_terms(FilterSpec(kind, sc.barrier), sc.plant, x, sc.nominal(x))
    a, ov = t.Lg2, t.output.override
    np.testing.assert_array_equal(t.output.u_total, sc.nominal(x) + ov)
    if a.shape[-1] == 2:
        cross = a[:, 0] * ov[:, 1] - a[:, 1] * ov[:, 0]
        assert np.max(np.abs(cross)) <= 1e-12 * max(1.0, float(np.max(np.abs(ov))))


@pytest.mark.parametrize("name", sorted(REGISTRY))
@pytest.mark.parametrize("variant,base_gamma", [("zero_dist", False), ("issf", True)])
def test_improvement_dominance(name, variant, base_gamma):
    sc = get_scenario(name)
    x = _states(sc, seed=3)
    u0 = sc.nominal(x)
    std = inverse_optimal(sc.plant, sc.barrier, x, u0, uses_gamma=base_gamma)
    imp = improved_filter(sc.plant, sc.barrier, x, u0, variant=variant)
    a = lie_derivatives(sc.plant, sc.barrier, x).Lg2
    gain_std = np.sum(a * std.override, axis=-1)
    gain_imp = np.sum(a * imp.override, axis=-1)
    assert np.min(gain_imp - gain_std) >= -1e-12


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_sontag_safety_inequality(name):
    sc = get_scenario(name)
    x = _states(sc, seed=4)
    out = sontag(sc.plant, sc.barrier, x, sc.nominal(x))
    lie = lie_derivatives(sc.plant, sc.barrier, x)
    hx = sc.barrier.h(x)
    hdot = lie.Lf + np.sum(lie.Lg2 * out.u_total, axis=-1)
    bound = -sc.barrier.alpha(hx) + np.linalg.norm(lie.Lg1, axis=-1) * sc.barrier.rho.inv(np.maximum(0, -hx))
    assert np.min(hdot - bound) >= -1e-9


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_cbf_qp_minimal_norm(name):
    sc = get_scenario(name)
    x = _states(sc, 200, seed=5)
    u0 = sc.nominal(x)
    qp = cbf_qp(sc.plant, sc.barrier, x, u0)
    lie = lie_derivatives(sc.plant, sc.barrier, x)
    alpha_h = sc.barrier.alpha(sc.barrier.h(x))
    m = sc.plant.ctrl_dim
    if m == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        th = np.linspace(0, 2 * np.pi, 721)[:-1]
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    fracs = np.linspace(0.0, 1.0, 21)
    for i in range(len(x)):
        radius = float(np.linalg.norm(qp.override[i])) - 1e-9
        if radius <= 0:
            continue
        cand = u0[i] + (fracs[:, None, None] * radius * dirs[None]).reshape(-1, m)
        lhs = lie.Lf[i] + cand @ lie.Lg2[i] + alpha_h[i]
        assert np.all(lhs < 0), f"shorter feasible control found at {x[i]}"


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, 3), st.floats(0.01, 10))
def test_inverse_optimal_always_satisfies_constraint(lf, u0, hval, g):
    plant = ControlAffinePlant(1, 0, 1, f=lambda x: np.full_like(x, lf), g1=None,
                               g2=lambda x: np.full(x.shape + (1,), g))
    out = inverse_optimal(plant, H_X, np.array([hval]), np.array([u0]))
    hdot = lf + g * float(out.u_total[0])
    assert hdot >= -hval - 1e-9 * max(1.0, abs(lf), abs(g * u0))

import json

import numpy as np
import pytest

from issf_margins.certify import (
    CertReport, CheckMode, Condition, CostAccount, InvalidRegionError, hji_check, hji_residual,
    issf_bf_check, penalty_function, penalty_sign_check, realized_cost, realized_costs, sample_points,
    sample_region, zbf_check,
)
from issf_margins.comparison import BUILTIN_GAMMAS, make_linear_ek, make_linear_k, make_quadratic
from issf_margins.filters import ConfigurationError, FilterKind
from issf_margins.plant import BarrierCandidate, Box, ControlAffinePlant, InvalidInputError
from issf_margins.scenarios import REGISTRY, get_scenario
from issf_margins.sim import DisturbanceSignal, EscapeWarning

from oracles import example3_closed_loop

ONES = lambda x: np.ones(x.shape + (1,))  # noqa: E731


def _leaky(dist=True):
    """``xdot = -x + w`` with ``h = x``."""
    plant = ControlAffinePlant(1, 1 if dist else 0, 1, f=lambda x: -x, g1=ONES if dist else None, g2=ONES)
    barrier = BarrierCandidate(h=lambda x: x[..., 0], grad_h=lambda x: np.ones_like(x),
                               alpha=make_linear_ek(1.0), rho=make_linear_k(1.0))
    return plant, barrier


ZERO_U = lambda x: np.zeros((len(x), 1))  # noqa: E731
BOX = Box([-2.0], [2.0])


# ---------------------------------------------------------------- HJI residual

@pytest.mark.parametrize("name", ["example2", "example3"])
def test_hji_residual_standard_examples(name):
    sc = get_scenario(name)
    x = np.linspace(-2, 2, 21)[:, None]
    res = hji_residual(sc.plant, sc.barrier, x, sc.nominal, FilterKind.INVERSE_OPTIMAL)
    np.testing.assert_allclose(res, 0.0, atol=1e-12)
    l = penalty_function(sc.plant, sc.barrier, x, sc.nominal, FilterKind.INVERSE_OPTIMAL)
    np.testing.assert_allclose(l, 4 * x[:, 0], atol=1e-12)


def test_hji_residual_improved_at_0p3_from_independent_terms():
    sc = get_scenario("example2_revisited")
    x = 0.3
    # independent hand evaluation: Lf, L_g2 h u0, augmented weight, penalty
    Lf, lu0 = -11.1 * x - 1, 10.1 * x + 1
    omega = Lf + lu0 + x
    r = max(0.0, -omega) + max(Lf, 0.0) + max(lu0, 0.0)
    l_tilde = -4 * (Lf + lu0 + max(0.0, -omega)) - 4 * max(Lf, 0.0) - 4 * max(lu0, 0.0)
    assert Lf + lu0 + r + l_tilde / 4 == pytest.approx(0.0, abs=1e-12)
    res = hji_residual(sc.plant, sc.barrier, np.array([x]), sc.nominal, FilterKind.IMPROVED_ZERO_DIST)
    assert abs(res) <= 1e-12
    l = penalty_function(sc.plant, sc.barrier, np.array([[x]]), sc.nominal, FilterKind.IMPROVED_ZERO_DIST)
    assert float(l[0]) == pytest.approx(l_tilde, abs=1e-12)


@pytest.mark.parametrize("name", sorted(REGISTRY))
@pytest.mark.parametrize("kind", list(FilterKind))
def test_hji_identity_on_all_pairs(name, kind):
    sc = get_scenario(name)
    rep = hji_check(sc.plant, sc.barrier, sc.nominal, kind, sc.box, n=1000)
    assert rep.passed, rep.to_dict()
    assert rep.mode is CheckMode.EQUALITY
    assert rep.n_points == 1000


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_hji_identity_with_attenuation(lam):
    sc = get_scenario("disk2d")
    for kind in (FilterKind.CBF_QP, FilterKind.INVERSE_OPTIMAL):
        rep = hji_check(sc.plant, sc.barrier, sc.nominal, kind, sc.box, n=300, lam=lam, uses_gamma=True)
        assert rep.passed


def test_hji_residual_skips_degenerate_points():
    plant = ControlAffinePlant(1, 0, 1, f=lambda x: np.ones_like(x), g1=None, g2=lambda x: x[..., None] * 1.0)
    _, barrier = _leaky()
    assert hji_residual(plant, barrier, np.array([0.0]), np.zeros(1), FilterKind.INVERSE_OPTIMAL) is None
    res = hji_residual(plant, barrier, np.array([[0.0], [1.0]]), np.zeros(1), FilterKind.INVERSE_OPTIMAL)
    assert np.isnan(res[0]) and abs(res[1]) <= 1e-12


# ---------------------------------------------------------------- penalty sign

@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_penalty_sign_check_standard_filter(name):
    sc = get_scenario(name)
    rep = penalty_sign_check(sc.plant, sc.barrier, sc.nominal, FilterKind.INVERSE_OPTIMAL, sc.box, n=500)
    assert rep.passed, rep.to_dict()


def test_penalty_sign_examples():
    sc = get_scenario("example2")
    rep = penalty_sign_check(sc.plant, sc.barrier, sc.nominal, FilterKind.INVERSE_OPTIMAL, sc.box, n=200)
    assert rep.details["min_interior_l"] > 0
    assert rep.details["max_exterior_l"] < 0
    l0 = penalty_function(sc.plant, sc.barrier, np.array([[0.0]]), sc.nominal, FilterKind.INVERSE_OPTIMAL)
    assert abs(float(l0[0])) <= 1e-9
    imp = get_scenario("example2_revisited")
    lt = penalty_function(imp.plant, imp.barrier, np.array([[0.5]]), imp.nominal, FilterKind.IMPROVED_ZERO_DIST)
    assert float(lt[0]) <= 4 * 0.5


def test_penalty_sign_check_needs_both_regions():
    sc = get_scenario("example2")
    with pytest.raises(InvalidRegionError):
        penalty_sign_check(sc.plant, sc.barrier, sc.nominal, FilterKind.INVERSE_OPTIMAL, Box([0.5], [1.0]), n=10)


def test_sample_region_and_points():
    sc = get_scenario("disk2d")
    inside = sample_region(sc.box, sc.barrier, 100, "interior")
    assert len(inside) == 100 and np.all(sc.barrier.h(inside) > 0)
    pts = sample_points(sc.box, 50, seed=7)
    assert pts.shape == (100, 2)
    np.testing.assert_array_equal(pts, sample_points(sc.box, 50, seed=7))


# ---------------------------------------------------------------- barrier conditions

def test_zbf_equality_case():
    plant, barrier = _leaky(dist=False)
    rep = zbf_check(plant, barrier, ZERO_U, BOX, n=200)
    assert rep.passed
    assert rep.worst_residual == pytest.approx(0.0, abs=1e-15)


def test_zbf_unsafe_drift_example_at_unit_gain():
    sc = get_scenario("example2")
    rep = zbf_check(sc.plant, sc.barrier, sc.closed_loop_u(), sc.box, n=300, sigma=1.0)
    assert rep.passed
    assert abs(rep.worst_residual) <= 1e-12


def test_zbf_safe_drift_example_fails_above_unit_gain():
    sc = get_scenario("example3")
    rep = zbf_check(sc.plant, sc.barrier, sc.closed_loop_u(), sc.box, n=300, sigma=1.2)
    assert not rep.passed
    a, c = example3_closed_loop(1.2)
    assert c == pytest.approx(-0.2)
    # margin (a + 1) x + c of the exact closed loop
    x = np.array(rep.worst_point)
    assert rep.worst_residual == pytest.approx(float((a + 1) * x[0] + c), abs=1e-12)
    rate0 = zbf_check(sc.plant, sc.barrier, sc.closed_loop_u(), Box([-1e-9], [1e-9]), n=5, sigma=1.2)
    assert rate0.worst_residual == pytest.approx(-0.2, abs=1e-8)


def test_issf_dissipation_symbolic_example():
    plant, barrier = _leaky()
    rep = issf_bf_check(plant, barrier, ZERO_U, BOX, [-1.0, -0.5, 0.0, 0.5, 1.0])
    assert rep.passed
    assert rep.worst_residual == pytest.approx(0.0, abs=1e-12)
    assert rep.worst_point["w"][0] <= 0


def test_issf_zero_grid_reduces_to_zbf():
    sc = get_scenario("example3")
    u = sc.closed_loop_u()
    for sigma in (1.0, 1.2):
        z = zbf_check(sc.plant, sc.barrier, u, sc.box, n=200, sigma=sigma)
        i = issf_bf_check(sc.plant, sc.barrier, u, sc.box, [0.0], n=200, sigma=sigma)
        assert z.passed == i.passed
        assert z.worst_residual == pytest.approx(i.worst_residual, abs=1e-15)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_issf_dissipation_improved_filter(sigma):
    sc = get_scenario("example2_revisited")
    g = sc.barrier.gamma
    rho = make_quadratic(g.params["c"] / 4.0)  # gamma(s/2)
    rep = issf_bf_check(sc.plant, sc.barrier, sc.closed_loop_u(FilterKind.IMPROVED_ISSF), sc.box, [-1.0, 1.0],
                        sigma=sigma, alpha=make_linear_ek(2 * sigma), rho=rho, n=300)
    assert rep.passed, rep.to_dict()


def test_issf_implications_and_cross_check():
    plant, barrier = _leaky()
    w_grid = [-1.0, 0.0, 1.0]
    mag = issf_bf_check(plant, barrier, ZERO_U, BOX, w_grid, Condition.MAGNITUDE, n=200)
    ext = issf_bf_check(plant, barrier, ZERO_U, BOX, w_grid, Condition.EXTERIOR, n=200)
    # with w = -1 the rate -x - 1 misses -alpha(h) = -x by 1 wherever the antecedent holds
    assert not mag.passed and mag.worst_residual == pytest.approx(-1.0)
    assert not ext.passed and ext.worst_residual == pytest.approx(-1.0)
    cross = issf_bf_check(plant, barrier, ZERO_U, BOX, w_grid, cross_check=True, n=200)
    assert cross.details["dissipation"]["passed"]
    assert not cross.details["verdicts_agree"]
    assert not cross.details["dissipation_pass_carries_over"]


def test_issf_guard_band_keeps_boundary_antecedent():
    plant, barrier = _leaky()
    # only h = 0 sampled; w = 0 so rho(|w|) = 0 and the antecedent holds with equality
    rep = issf_bf_check(plant, barrier, ZERO_U, Box([-1e-13], [1e-13]), [0.0], Condition.MAGNITUDE, n=4)
    assert rep.details["vacuous"] == 0


def test_issf_requires_rho_and_finite_grid():
    plant, barrier = _leaky()
    bare = BarrierCandidate(h=barrier.h, grad_h=barrier.grad_h, alpha=barrier.alpha)
    with pytest.raises(ConfigurationError):
        issf_bf_check(plant, bare, ZERO_U, BOX, [0.0])
    with pytest.raises(InvalidInputError):
        issf_bf_check(plant, barrier, ZERO_U, BOX, [np.inf])


# ---------------------------------------------------------------- reports

def test_cert_report_verdicts_and_json_round_trip():
    assert CertReport.verdict(5e-10, CheckMode.EQUALITY, 1e-9)
    assert not CertReport.verdict(-2e-9, CheckMode.EQUALITY, 1e-9)
    assert CertReport.verdict(-5e-10, CheckMode.INEQUALITY, 1e-9)
    assert not CertReport.verdict(-2e-9, CheckMode.INEQUALITY, 1e-9)
    assert CertReport.verdict(np.inf, CheckMode.INEQUALITY, 1e-9)
    sc = get_scenario("example2")
    rep = zbf_check(sc.plant, sc.barrier, sc.closed_loop_u(), sc.box, n=20)
    back = CertReport.from_dict(json.loads(rep.to_json()))
    assert back.passed == rep.passed and back.worst_residual == rep.worst_residual
    assert set(json.loads(rep.to_json())) >= {"check_name", "n_points", "worst_residual", "worst_point", "passed"}


# ---------------------------------------------------------------- realized cost

def test_cost_identity_unsafe_drift_example():
    sc = get_scenario("example2")
    acc = realized_cost(sc.plant, sc.barrier, FilterKind.INVERSE_OPTIMAL, sc.nominal, [1.0], horizon=20)
    # x(t) = exp(-t): running l integrates to 4 (1 - e^-20), terminal 4 e^-20
    assert acc.running_l == pytest.approx(4 * (1 - np.exp(-20)), rel=1e-9)
    assert acc.terminal == pytest.approx(4 * np.exp(-20), rel=1e-6)
    assert acc.total == pytest.approx(4.0, rel=2e-3)
    assert acc.total == acc.terminal + acc.running_l - acc.running_penalty + acc.running_dist_reward


def test_cost_on_boundary_is_zero():
    sc = get_scenario("example2")
    acc = realized_cost(sc.plant, sc.barrier, FilterKind.INVERSE_OPTIMAL, sc.nominal, [0.0], horizon=5)
    assert abs(acc.total) <= 1e-9


def test_cost_constant_offset_is_suboptimal():
    sc = get_scenario("example2")
    acc = realized_cost(sc.plant, sc.barrier, FilterKind.INVERSE_OPTIMAL, sc.nominal, [1.0], horizon=20,
                        control_offset=[5.0])
    assert acc.total < 4.0 - 0.1


@pytest.mark.parametrize("kind", [FilterKind.CBF_QP, FilterKind.SONTAG])
def test_cost_identity_other_laws(kind):
    sc = get_scenario("disk2d")
    accs = realized_costs(sc.plant, sc.barrier, kind, sc.nominal, [(0.0, 0.5), (0.5, 0.5)], horizon=5, dt=1e-3)
    for acc, x0 in zip(accs, [(0.0, 0.5), (0.5, 0.5)]):
        h0 = 1 - np.sum(np.square(x0))
        assert acc.total == pytest.approx(4 * h0, rel=2e-3)


def test_cost_perturbations_never_beat_optimum_with_positive_weight():
    sc = get_scenario("disk2d")
    rng = np.random.default_rng(0)
    offsets = np.vstack([np.zeros(2), rng.uniform(-1, 1, size=(6, 2))])
    x0 = [(0.5, 0.5)] * len(offsets)
    accs = realized_costs(sc.plant, sc.barrier, FilterKind.INVERSE_OPTIMAL, sc.nominal, x0, horizon=3,
                          dt=2e-3, control_offsets=offsets)
    best = accs[0].total
    assert all(a.total <= best + 1e-6 for a in accs[1:])


def test_lambda_effect_on_disturbance_reward_is_non_increasing():
    sc = get_scenario("disk2d")
    w = DisturbanceSignal.constant([0.6, 0.0])
    rewards = []
    for lam in (0.5, 1.0, 2.0):
        acc = realized_cost(sc.plant, sc.barrier, FilterKind.IMPROVED_ISSF, sc.nominal, [0.0, 0.5], w_signal=w,
                            horizon=1.0, lam=lam, dt=1e-3)
        rewards.append(acc.running_dist_reward)
    assert rewards[0] >= rewards[1] >= rewards[2] > 0
    # closed form 2 lam c (w/lam)^2 T with c = 0.5 and T = 1
    np.testing.assert_allclose(rewards, [0.36 / lam for lam in (0.5, 1.0, 2.0)], rtol=1e-9)


@pytest.mark.parametrize("name", sorted(BUILTIN_GAMMAS))
def test_scaled_gamma_is_non_increasing_in_lambda(name):
    g = BUILTIN_GAMMAS[name]()
    lams = np.linspace(0.05, 2.0, 40)
    for r in (0.1, 1.0, 3.0):
        vals = 2 * lams * g(r / lams)
        assert np.all(np.diff(vals) <= 1e-12 * np.max(np.abs(vals)))


def test_cost_argument_validation():
    sc = get_scenario("example2")
    with pytest.raises(InvalidInputError):
        realized_cost(sc.plant, sc.barrier, FilterKind.INVERSE_OPTIMAL, sc.nominal, [1.0], horizon=0)
    with pytest.raises(InvalidInputError):
        realized_cost(sc.plant, sc.barrier, FilterKind.INVERSE_OPTIMAL, sc.nominal, [1.0], lam=3.0)


def test_cost_truncation_warns_with_partial_account():
    sc = get_scenario("example2_revisited")
    with pytest.warns(EscapeWarning):
        acc = realized_cost(sc.plant, sc.barrier, FilterKind.IMPROVED_ZERO_DIST, sc.nominal, [1.0],
                            horizon=5, escape_radius=50.0)
    assert acc.truncated and acc.end_time < 5
    assert isinstance(acc.to_dict()["total"], float)


def test_cost_account_total_handles_infinite_penalty():
    acc = CostAccount(1.0, 2.0, np.inf, 0.0)
    assert acc.total == -np.inf
    assert acc.to_dict()["total"] == "-inf"

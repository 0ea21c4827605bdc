import math

import numpy as np
import pytest

from tic_contracts import DiscountSpec, MarketModel, Preferences, validate


def exp_prefs(**kw):
    base = dict(agent_utility="exponential", principal_utility="exponential",
                gamma_a=1.0, gamma_p=0.5, r0=-0.5,
                discount=DiscountSpec.exponential(0.3),
                spec_tag="discounted_utility")
    base.update(kw)
    return Preferences(**base)


def test_hm_linear_family_shapes():
    m = MarketModel.hm_linear(0.0, 1.0, 2.0, 3.0)
    # sigma * b(a) = a regardless of sigma
    assert math.isclose(m.sigma_at(0.3) * m.drift(0.3, 1.7), 1.7)
    assert math.isclose(m.cost(0.0, 2.0), 3.0 * 2.0 ** 2 / 2.0)


def test_quadratic_and_power_families():
    q = MarketModel.quadratic(0.0, 1.0, 1.5)
    assert math.isclose(q.drift(0.2, 0.8), 0.8)
    assert math.isclose(q.cost(0.2, 0.8), 0.32)
    p = MarketModel.power(0.0, 1.0, 1.0, 3.0)
    assert math.isclose(p.cost(0.0, 2.0), 8.0 / 3.0)
    with pytest.raises(ValueError):
        MarketModel.power(0.0, 1.0, 1.0, 1.0)


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        MarketModel.quadratic(0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        MarketModel.quadratic(0.0, 1.0, -2.0)


def test_sigma_at_accepts_arrays():
    m = MarketModel.quadratic(0.0, 2.0, 1.5)
    out = m.sigma_at(np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(out, 1.5)


def test_validate_flags_bad_geometry():
    m = MarketModel.quadratic(0.0, 1.0, 1.0, action=(2.0, 1.0))
    msgs = validate(m, exp_prefs())
    assert any("empty action set" in msg for msg in msgs)

    m2 = MarketModel.from_families(0.0, -1.0, 1.0,
                                   drift=("quadratic", {}), cost=("quadratic", {}),
                                   action=(0.0, 1.0))
    assert any("horizon" in msg for msg in validate(m2, exp_prefs()))

    m3 = MarketModel.quadratic(0.0, 1.0, 1.0, action=(0.0, math.inf))
    assert any("bounded" in msg for msg in validate(m3, exp_prefs()))


def test_validate_spec_utility_matrix():
    m = MarketModel.quadratic(0.0, 1.0, 1.0)
    rn = Preferences(agent_utility="risk_neutral", principal_utility="risk_neutral",
                     gamma_a=0.0, gamma_p=0.0, r0=0.1,
                     discount=DiscountSpec.exponential(0.3), spec_tag="separable_rn")
    assert validate(m, rn) == []

    wrong = exp_prefs(spec_tag="separable_rn")
    assert any("spec/utility mismatch" in msg for msg in validate(m, wrong))

    du_rn_principal = exp_prefs(principal_utility="risk_neutral", gamma_p=0.0)
    assert validate(m, du_rn_principal) == []


def test_validate_reservation_sign_for_exponential_agent():
    m = MarketModel.quadratic(0.0, 1.0, 1.0)
    msgs = validate(m, exp_prefs(r0=0.25))
    assert any("reservation utility must be negative" in msg for msg in msgs)


def test_validate_cost_convexity_for_first_best():
    def concave_cost(t, a):
        return math.sqrt(abs(a) + 1e-9)

    m = MarketModel(x0=0.0, horizon=1.0, sigma=lambda t: 1.0,
                    drift=lambda t, a: a, cost=concave_cost,
                    action_lo=0.0, action_hi=4.0)
    p = exp_prefs(spec_tag="first_best_nonseparable")
    assert any("convex" in msg for msg in validate(m, p))


def test_preferences_reject_inconsistent_utilities():
    with pytest.raises(ValueError):
        exp_prefs(gamma_a=0.0)
    with pytest.raises(ValueError):
        Preferences(agent_utility="risk_neutral", principal_utility="risk_neutral",
                    gamma_a=0.5, gamma_p=0.0, r0=0.1,
                    discount=DiscountSpec.exponential(0.3), spec_tag="separable_rn")
    with pytest.raises(ValueError):
        exp_prefs(spec_tag="third_best")


def test_utility_round_trip():
    p = exp_prefs(gamma_a=2.0)
    for x in (-1.0, 0.0, 0.7, 3.0):
        u = p.agent_u(x)
        assert u < 0.0
        assert math.isclose(p.agent_u_inv(u), x, abs_tol=1e-12)
    with pytest.raises(ValueError):
        p.agent_u_inv(0.0)
    rn = Preferences(agent_utility="risk_neutral", principal_utility="risk_neutral",
                     gamma_a=0.0, gamma_p=0.0, r0=0.1,
                     discount=DiscountSpec.exponential(0.3), spec_tag="separable_rn")
    assert rn.agent_u(1.7) == 1.7
    assert rn.principal_u(-0.4) == -0.4


def test_model_json_round_trip():
    m = MarketModel.hm_linear(0.25, 2.0, 1.5, 0.8, action=(0.0, 5.0))
    again = MarketModel.from_json(m.to_json())
    assert again.to_json() == m.to_json()
    for t, a in ((0.0, 0.3), (1.0, 2.0)):
        assert math.isclose(again.drift(t, a), m.drift(t, a))
        assert math.isclose(again.cost(t, a), m.cost(t, a))

    custom = MarketModel(x0=0.0, horizon=1.0, sigma=lambda t: 1.0,
                         drift=lambda t, a: a, cost=lambda t, a: a * a,
                         action_lo=0.0, action_hi=1.0)
    with pytest.raises(ValueError):
        custom.to_json()


def test_preferences_json_round_trip():
    p = exp_prefs()
    again = Preferences.from_json(p.to_json())
    assert again == p

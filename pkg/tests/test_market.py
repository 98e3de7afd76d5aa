import numpy as np
import pytest

from pa_lab.market import EllipticityError, MarketParams, risk_premium, wealth_step


def test_risk_premium_zero_drift():
    p = MarketParams(b=[0.0], sigma=[[0.4]])
    assert risk_premium(p) == pytest.approx([0.0])


def test_risk_premium_scalar(baseline_market):
    assert risk_premium(baseline_market) == pytest.approx([1.0 / 3.0])


def test_risk_premium_identity_vol():
    p = MarketParams(b=[1.0, 2.0], sigma=np.eye(2))
    assert risk_premium(p) == pytest.approx([1.0, 2.0])


def test_risk_premium_linear_in_drift(rng):
    sigma = rng.normal(size=(3, 3)) + 3.0 * np.eye(3)
    b1 = rng.normal(size=3)
    b2 = rng.normal(size=3)
    th = lambda b: risk_premium(MarketParams(b=b, sigma=sigma))
    combo = th(2.0 * b1 - 0.5 * b2)
    np.testing.assert_allclose(combo, 2.0 * th(b1) - 0.5 * th(b2), atol=1e-12)


def test_wealth_step_no_position(baseline_market):
    for dW in (-0.3, 0.0, 2.0):
        assert wealth_step(1.0, 0.0, baseline_market, dW, 0.5) == 1.0


def test_wealth_step_formula(baseline_market):
    assert wealth_step(1.0, 1.0, baseline_market, 0.0, 0.01) == pytest.approx(1.001)


def test_wealth_step_drift_only():
    # vanishing volatility: deterministic growth at rate pi * b
    p = MarketParams(b=[0.2], sigma=[[1e-8]], ellipticity_floor=1e-20)
    x = 1.0
    for _ in range(10):
        x = wealth_step(x, 0.5, p, 0.0, 0.1)
    assert x == pytest.approx(1.0 + 0.5 * 0.2 * 1.0, abs=1e-12)


def test_wealth_step_beta_form(baseline_market, rng):
    # pi through the asset form agrees with beta = pi sigma through the
    # risk-premium form
    theta = risk_premium(baseline_market)
    for _ in range(25):
        x, pi, dW, dt = rng.normal(), rng.normal(), rng.normal(), rng.uniform(0.01, 1)
        direct = wealth_step(x, pi, baseline_market, dW, dt)
        beta = pi * baseline_market.sigma[0, 0]
        via_beta = x + beta * theta[0] * dt + beta * dW
        assert direct == pytest.approx(via_beta, rel=1e-13)


def test_wealth_step_rejects_bad_dt(baseline_market):
    with pytest.raises(ValueError):
        wealth_step(1.0, 1.0, baseline_market, 0.0, 0.0)


def test_invalid_market_params():
    with pytest.raises(ValueError):
        MarketParams(b=[0.1], sigma=[[0.3]], eta=0.0)
    with pytest.raises(ValueError):
        MarketParams(b=[0.1], sigma=[[0.3]], constraint_lo=1.0, constraint_hi=0.0)
    with pytest.raises(EllipticityError):
        MarketParams(b=[0.1, 0.1], sigma=[[0.3, 0.0], [0.3, 0.0]])

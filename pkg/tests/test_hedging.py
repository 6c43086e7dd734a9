import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from complab import make_builtin_model, representation_integrand, replicate, simulate_paths, varswap_price
from complab.completeness import build_G
from complab.errors import ConfigError
from complab.hedging import (
    accrued_log_gains,
    hedge_ratios,
    hedge_sweep,
    varswap_rank_check,
    varswap_terminal,
)
from complab.paths import quadratic_variation
from complab.pricing import Asset, ClosedFormPricer, MCPricer, portfolio, stock
import oracles


def heat_assets(m):
    return [Asset("european_factor", "square", 1.0, coordinate=j) for j in range(2)]


def test_integrand_of_traded_asset_is_its_row(heat_model):
    pricers = [ClosedFormPricer(heat_model, a) for a in heat_assets(heat_model)]
    x = np.array([0.7, -1.3])
    G = build_G(pricers, 0.2, x).G
    for i, p in enumerate(pricers):
        np.testing.assert_array_equal(representation_integrand(p, 0.2, x), G[i])


def test_integrand_of_sum_of_squares(heat_model):
    claim = ClosedFormPricer(heat_model, portfolio([(1.0, a) for a in heat_assets(heat_model)]))
    np.testing.assert_allclose(representation_integrand(claim, 0.0, [1.5, -2.0]), [3.0, -4.0])


def test_gbm_call_integrand_vs_mc(gbm_model):
    call = Asset("european_stock", "call", 1.0, strike=100.0)
    chi = representation_integrand(ClosedFormPricer(gbm_model, call), 0.0, gbm_model.x0_array)
    est = MCPricer(gbm_model, call, n_samples=100_000, seed=2).gradient_estimate(0.0, gbm_model.x0_array)
    assert abs(chi[0] - est.value[0]) < 3 * est.stderr[0]
    assert chi[0] == pytest.approx(100.0 * oracles.bs_call_delta(100.0, 100.0, 0.0, 0.2, 1.0), rel=1e-12)


def test_static_linear_claim_is_replicated_exactly(heat_model):
    assets = heat_assets(heat_model)
    pricers = [ClosedFormPricer(heat_model, a) for a in assets]
    claim = ClosedFormPricer(heat_model, portfolio([(3.0, assets[0]), (2.0, assets[1])]))
    paths = simulate_paths(heat_model, 500, 40, seed=3)
    rep = replicate(heat_model, pricers, claim, paths, 40)
    np.testing.assert_allclose(rep.alphas, np.broadcast_to([3.0, 2.0], rep.alphas.shape), rtol=1e-12)
    assert rep.max_error < 1e-9


def test_self_financing_identity_bit_exact(sv_model):
    pricers = [ClosedFormPricer(sv_model, stock(1.0)),
               ClosedFormPricer(sv_model, Asset("european_stock", "affine", 1.0, a=3.0, b=0.5))]
    claim = ClosedFormPricer(sv_model, Asset("european_stock", "affine", 1.0, a=1.0, b=2.0))
    paths = simulate_paths(sv_model, 20, 30, seed=4)
    rep = replicate(sv_model, pricers, claim, paths, 10)
    for n in range(paths.n_paths):
        x = rep.initial_price
        for j in range(rep.rebalance_steps):
            step = 0.0
            for i in range(sv_model.d):
                step += rep.alphas[n, j, i] * (rep.discounted_prices[n, j + 1, i] - rep.discounted_prices[n, j, i])
            x = x + step
            assert x == rep.discounted_wealth[n, j + 1]


def test_singular_points_use_zero_holdings():
    G = np.array([[[1.0, 0.0], [2.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1e-7]]])
    chi = np.array([[1.0, 1.0], [3.0, 4.0], [1.0, 1.0]])
    alpha, singular, truncated = hedge_ratios(G, chi)
    assert singular.tolist() == [True, False, False]
    assert truncated.tolist() == [False, False, True]
    np.testing.assert_array_equal(alpha[0], [0.0, 0.0])
    np.testing.assert_allclose(alpha[1], [3.0, 4.0])
    np.testing.assert_allclose(alpha[2], [1.0, 0.0])


def test_gbm_delta_hedge_convergence(gbm_model):
    call = Asset("european_stock", "call", 1.0, strike=100.0)
    paths = simulate_paths(gbm_model, 10_000, 200, seed=5)
    reports, slope = hedge_sweep(gbm_model, [ClosedFormPricer(gbm_model, stock(1.0))],
                                 ClosedFormPricer(gbm_model, call), paths, [25, 50, 100, 200])
    assert 0.35 <= slope <= 0.65
    rms = [r.rms_error for r in reports]
    assert rms == sorted(rms, reverse=True)
    assert abs(reports[-1].mean_error) < 3 * rms[-1] / math.sqrt(10_000) + 0.01


def test_replicate_input_checks(gbm_model):
    pricers = [ClosedFormPricer(gbm_model, stock(1.0))]
    paths = simulate_paths(gbm_model, 10, 20, seed=1)
    late = ClosedFormPricer(gbm_model, Asset("european_stock", "call", 2.0, strike=100.0))
    with pytest.raises(ConfigError):
        replicate(gbm_model, pricers, late, paths, 20)
    claim = ClosedFormPricer(gbm_model, Asset("european_stock", "call", 1.0, strike=100.0))
    with pytest.raises(ConfigError):
        replicate(gbm_model, pricers, claim, paths, 7)


@pytest.mark.parametrize("r,expected", [(0.0, 0.04), (0.05, oracles.VARSWAP_GBM_R5)])
def test_varswap_gbm_value(r, expected):
    m = make_builtin_model("gbm", {"s0": 100.0, "sigma": 0.2, "r": r})
    assert abs(varswap_price(m) - expected) < 1e-4
    assert varswap_price(m) == pytest.approx(math.exp(-r) * 0.04, abs=1e-14)


def test_varswap_accrued_leg_and_mid_life_value():
    m = make_builtin_model("gbm", {"s0": 100.0, "sigma": 0.2, "r": 0.05})
    v = varswap_price(m, t=0.5, x=np.array([math.log(110.0)]), accrued=0.1)
    lc = math.exp(-0.025) * (math.log(1.1) - 0.05 + (0.05 - 0.02) * 0.5)
    assert v == pytest.approx(2 * math.exp(-0.025) * 0.1 - 2 * lc, abs=1e-14)
    with pytest.raises(ConfigError):
        varswap_price(make_builtin_model("correlated_bm", {"sigma": 1.0, "d": 1}))


def test_varswap_terminal_tracks_realized_variance(sv_model):
    paths = simulate_paths(sv_model, 1000, 250, seed=9)
    vt = varswap_terminal(paths)
    qv = quadratic_variation(paths).terminal
    rel = np.abs(vt - qv) / qv
    assert np.mean(rel <= 2.0 / math.sqrt(250)) >= 0.95
    acc = accrued_log_gains(paths)
    assert np.array_equal(acc[:, 0], np.zeros(1000))


def test_rank_check_random_two_by_two():
    rng = np.random.default_rng(61)
    failures = 0
    for _ in range(1000):
        G = rng.standard_normal((2, 2))
        failures += not varswap_rank_check(G, 100.0, rng.uniform(0, 1), 1.0, 0.0)[2]
    assert failures == 0


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 5), data=st.data(), v1=st.floats(1.0, 500.0),
       r=st.floats(0.0, 0.1))
def test_rank_check_controlled_rank(seed, d, data, v1, r):
    rank = data.draw(st.integers(0, d))
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((d, rank)) @ rng.standard_normal((rank, d))
    before, after, equal = varswap_rank_check(G, v1, 0.3, 1.0, r)
    assert equal and before == rank


def test_rank_check_two_calls_with_log_contract_row():
    # rank-1 block from two calls on factor 1 plus a log-contract row (d = 3)
    G = np.array([[0.6, 0.0, 0.0], [0.3, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert varswap_rank_check(G, 100.0, 0.5, 1.0, 0.02) == (1, 1, True)
    G[2] = [1.0, 0.0, 2.0]
    assert varswap_rank_check(G, 100.0, 0.5, 1.0, 0.02) == (2, 2, True)


def test_rank_check_nonsingular_and_errors():
    assert varswap_rank_check(np.eye(3), 50.0, 0.0, 1.0, 0.01) == (3, 3, True)
    with pytest.raises(ConfigError):
        varswap_rank_check(np.eye(2), 0.0, 0.0, 1.0, 0.0)

import io
import math

import numpy as np
import pytest
import scipy.sparse as sp

from complab import make_builtin_model
from complab.errors import ConfigError, DomainError, NumericalError
from complab.pde import EXP_LINEAR, LINEAR, GridSpec, default_grid, derivative_matrices, solve_pde
from complab.pricing import Asset, black_scholes
import oracles
from conftest import SV_PARAMS


@pytest.fixture(scope="module")
def heat_surfaces():
    m = make_builtin_model("correlated_bm", {"sigma": np.eye(2).tolist()})
    grid = GridSpec((-10.0, -10.0), (10.0, 10.0), (201, 201), 200)
    return m, grid, [solve_pde(m, Asset("european_factor", "square", 1.0, coordinate=j), grid) for j in range(2)]


@pytest.fixture(scope="module")
def gbm_surfaces():
    out = {}
    for r in (0.0, 0.05):
        m = make_builtin_model("gbm", {"s0": 100.0, "sigma": 0.2, "r": r})
        x0 = m.x0[0]
        grid = GridSpec((x0 - 2.5,), (x0 + 2.5,), (400,), 400)
        out[r] = (m, grid, {k: solve_pde(m, Asset("european_stock", k, 1.0, strike=100.0), grid)
                            for k in ("call", "put")})
    return out


def test_grid_validation():
    with pytest.raises(ConfigError):
        GridSpec((0.0,), (0.0,), (10,))
    with pytest.raises(ConfigError):
        GridSpec((0.0,), (1.0,), (3,))
    with pytest.raises(ConfigError):
        GridSpec((0.0,), (1.0,), (10,), rannacher_steps=3)
    with pytest.raises(ConfigError):
        GridSpec((0.0,), (math.inf,), (10,))


@pytest.mark.parametrize("bc", [LINEAR, EXP_LINEAR])
def test_stencils_exact_on_low_order_data(bc):
    n, h = 11, 0.1
    x = np.arange(n) * h
    d1, d2 = derivative_matrices(n, h, bc)
    lin = 3.0 + 2.0 * x
    np.testing.assert_allclose(d1 @ lin, 2.0, atol=1e-12) if bc == LINEAR else None
    np.testing.assert_allclose((d2 @ lin)[1:-1], 0.0, atol=1e-10)
    quad = x * x
    np.testing.assert_allclose((d1 @ quad)[1:-1], 2 * x[1:-1], atol=1e-12)
    np.testing.assert_allclose((d2 @ quad)[1:-1], 2.0, atol=1e-10)
    assert sp.issparse(d1)


def test_exp_linear_boundary_keeps_exponential():
    # v = exp(x) satisfies v_xx = v_x exactly, which the ghost node imposes
    n, h = 21, 0.05
    x = np.arange(n) * h
    d1, d2 = derivative_matrices(n, h, EXP_LINEAR)
    v = np.exp(x)
    resid = (d2 @ v) - (d1 @ v)
    assert abs(resid[0]) < 1e-12 and abs(resid[-1]) < 1e-12


def test_heat_surface_matches_exact_solution(heat_surfaces):
    _, grid, surfs = heat_surfaces
    mesh = np.stack(np.meshgrid(*grid.axes, indexing="ij"), -1)
    inner = np.all(np.abs(mesh) <= 4.0, axis=-1)
    for j, s in enumerate(surfs):
        for k in (0, 100, 199):
            exact = mesh[..., j] ** 2 + (1.0 - s.times[k])
            assert np.max(np.abs(s.values[k][inner] - exact[inner])) < 1e-4


def test_terminal_slice_is_payoff(heat_surfaces, gbm_surfaces):
    _, grid, surfs = heat_surfaces
    mesh = np.stack(np.meshgrid(*grid.axes, indexing="ij"), -1)
    assert np.array_equal(surfs[0].values[-1], mesh[..., 0] ** 2)
    m, g, s = gbm_surfaces[0.0]
    assert np.array_equal(s["put"].values[-1], np.maximum(100.0 - np.exp(g.axes[0]), 0.0))


def test_heat_gradient(heat_surfaces):
    _, _, surfs = heat_surfaces
    g = np.array([s.gradient(0.0, np.array([1.0, 2.0])) for s in surfs])
    np.testing.assert_allclose(g, np.diag([2.0, 4.0]), atol=1e-6)


def test_gbm_atm_put_and_call(gbm_surfaces):
    m, _, s = gbm_surfaces[0.0]
    x0 = m.x0_array
    assert abs(s["put"].price(0.0, x0) - oracles.BS_ATM_CALL_R0) < 1e-2
    assert abs(s["call"].price(0.0, x0) - oracles.BS_ATM_CALL_R0) < 1e-2
    m, _, s = gbm_surfaces[0.05]
    assert abs(s["call"].price(0.0, m.x0_array) - oracles.BS_ATM_CALL_R5) < 1e-2
    assert abs(s["put"].price(0.0, m.x0_array) - oracles.BS_ATM_PUT_R5) < 1e-2


@pytest.mark.parametrize("r", [0.0, 0.05])
def test_put_call_parity(gbm_surfaces, r):
    m, grid, s = gbm_surfaces[r]
    x = grid.axes[0]
    inner = np.abs(x - m.x0[0]) <= 1.5
    for k in (0, 200):
        tau = 1.0 - s["call"].times[k]
        parity = s["call"].values[k] - s["put"].values[k] - (np.exp(x) - 100.0 * math.exp(-r * tau))
        assert np.max(np.abs(parity[inner])) < 1e-2


def test_gbm_surface_against_black_scholes_across_strikes():
    m = make_builtin_model("gbm", {"s0": 100.0, "sigma": 0.3, "r": 0.02})
    x0 = m.x0[0]
    grid = GridSpec((x0 - 3.0,), (x0 + 3.0,), (400,), 300)
    for k in (80.0, 100.0, 125.0):
        s = solve_pde(m, Asset("european_stock", "put", 1.0, strike=k), grid)
        for t in (0.0, 0.5):
            assert abs(s.price(t, m.x0_array) - black_scholes(100.0, k, 0.02, 0.3, 1.0 - t, "put")) < 1e-2


def test_expou_sv_residual_independent_evaluator():
    """Plug the discrete solution into the full generator with np.gradient stencils."""
    m = make_builtin_model("expou_sv", SV_PARAMS)
    x0, y0 = m.x0
    grid = GridSpec((x0 - 2.5, y0 - 1.8), (x0 + 2.5, y0 + 1.8), (201, 101), 400)
    s = solve_pde(m, Asset("european_stock", "put", 1.0, strike=100.0), grid)
    hx, hy = grid.spacings
    k = len(s.times) // 2
    v_t = (s.values[k + 1] - s.values[k - 1]) / (s.times[k + 1] - s.times[k - 1])
    v = s.values[k]
    v_x, v_y = np.gradient(v, hx, hy)
    v_xx = np.gradient(v_x, hx, axis=0)
    v_yy = np.gradient(v_y, hy, axis=1)
    v_xy = np.gradient(v_x, hy, axis=1)
    X, Y = np.meshgrid(*grid.axes, indexing="ij")
    vol, gamma, rho, kappa, theta = np.exp(Y), 0.5, -0.5, 1.0, y0
    resid = (v_t - 0.5 * vol ** 2 * v_x + kappa * (theta - Y) * v_y + 0.5 * vol ** 2 * v_xx
             + rho * gamma * vol * v_xy + 0.5 * gamma ** 2 * v_yy)
    inner = (np.abs(X - x0) <= 1.0) & (np.abs(Y - y0) <= 0.9)
    # scaled by strike and horizon
    assert np.max(np.abs(resid[inner])) * 1.0 / 100.0 < 1e-3


def test_sv_put_has_positive_vega(sv_model):
    x0, y0 = sv_model.x0
    grid = GridSpec((x0 - 2.5, y0 - 1.8), (x0 + 2.5, y0 + 1.8), (121, 61), 200)
    s = solve_pde(sv_model, Asset("european_stock", "put", 1.0, strike=100.0), grid)
    g = s.gradient(0.5, sv_model.x0_array)
    assert g[1] > 1.0 and g[0] < 0.0


def test_gradient_near_edge_raises(gbm_surfaces):
    m, grid, s = gbm_surfaces[0.0]
    with pytest.raises(DomainError):
        s["put"].gradient(0.0, np.array([grid.lower[0] + 0.5 * grid.spacings[0]]))
    with pytest.raises(DomainError):
        s["put"].price(1.5, m.x0_array)


def test_cross_term_bound_is_enforced(sv_model):
    x0, y0 = sv_model.x0
    grid = GridSpec((x0 - 2.5, y0 - 1.8), (x0 + 2.5, y0 + 1.8), (241, 121), 20)
    with pytest.raises(NumericalError, match="time steps"):
        solve_pde(sv_model, Asset("european_stock", "put", 1.0, strike=100.0), grid)


def test_default_grid_respects_cross_bound(sv_model):
    grid = default_grid(sv_model, Asset("european_stock", "put", 1.0, strike=100.0), nodes=61)
    s = solve_pde(sv_model, Asset("european_stock", "put", 1.0, strike=100.0), grid)
    assert 7.0 < s.price(0.0, sv_model.x0_array) < 9.5


def test_surface_csv(gbm_surfaces):
    _, _, s = gbm_surfaces[0.0]
    buf = io.StringIO()
    s["put"].write_csv(buf, time_stride=200)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,x_1,value"
    assert len(lines) == 1 + 3 * 400

"""Replication backtests and variance-swap identities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from complab.completeness import DEFAULT_TOLERANCE, JacobianEvaluation, jacobian, numerical_rank
from complab.errors import ConfigError
from complab.factor_models import FactorModel
from complab.paths import PathSet
from complab.pricing import Asset, log_contract, make_pricer

# singular-value ratio below which small singular values are truncated
PSEUDO_INVERSE_TOLERANCE = 1e-6


def representation_integrand(claim_pricer, t, x) -> np.ndarray:
    """Markov integrand of the claim against ``dM``: ``grad v_H(t, x)``."""
    return np.asarray(claim_pricer.gradient(t, x), dtype=float)


def hedge_ratios(G: np.ndarray, chi: np.ndarray, singular_tol: float = DEFAULT_TOLERANCE,
                 pinv_tol: float = PSEUDO_INVERSE_TOLERANCE):
    """Solve ``alpha G = chi`` row-wise in a stack.

    Singular points (ratio below ``singular_tol``) get ``alpha = 0``; near
    singular ones use a pseudo-inverse that drops singular values below
    ``pinv_tol * s_max``.  Returns ``alpha`` and the two event masks.
    """
    u, s, vh = np.linalg.svd(G)
    top = s[..., :1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(top[..., 0] > 0, s[..., -1] / top[..., 0], 0.0)
        inv = np.where(s > pinv_tol * top, 1.0 / s, 0.0)
    singular = ratio < singular_tol
    truncated = ~singular & (ratio < pinv_tol)
    # alpha = chi V diag(1/s) U^T
    coef = np.einsum("...j,...ij->...i", chi, vh) * inv
    alpha = np.einsum("...i,...ji->...j", coef, u)
    alpha[singular] = 0.0
    return alpha, singular, truncated


@dataclass
class HedgeReport:
    """Per-path terminal errors ``H(xi_T) - X_T`` and the strategy that produced them.

    ``discounted_prices`` has shape ``(N, R+1, d)``, ``alphas`` ``(N, R, d)``
    and ``discounted_wealth`` ``(N, R+1)``.
    """

    terminal_error: np.ndarray
    singular_events: np.ndarray
    pseudo_inverse_events: np.ndarray
    rebalance_steps: int
    dt: float
    initial_price: float
    alphas: np.ndarray
    discounted_prices: np.ndarray
    discounted_wealth: np.ndarray

    @property
    def mean_error(self) -> float:
        return float(self.terminal_error.mean())

    @property
    def rms_error(self) -> float:
        return float(np.sqrt(np.mean(self.terminal_error ** 2)))

    @property
    def max_error(self) -> float:
        return float(np.max(np.abs(self.terminal_error)))

    def summary(self) -> dict:
        return {
            "rebalance_steps": self.rebalance_steps,
            "dt": self.dt,
            "initial_price": self.initial_price,
            "mean_error": self.mean_error,
            "rms_error": self.rms_error,
            "max_abs_error": self.max_error,
            "singular_events": int(self.singular_events.sum()),
            "pseudo_inverse_events": int(self.pseudo_inverse_events.sum()),
        }


def replicate(model: FactorModel, pricers: Sequence, claim_pricer, paths: PathSet, rebalance_steps: int,
              singular_tol: float = DEFAULT_TOLERANCE, pinv_tol: float = PSEUDO_INVERSE_TOLERANCE) -> HedgeReport:
    """Self-financing replication of a maturity-T claim with the traded assets.

    Starts from the claim price at ``(0, x0)``; at every rebalance time holds
    ``alpha = grad v_H . G^{-1}`` units of the assets and accumulates the
    discounted gains ``sum_i alpha_i dA~_i``.
    """
    claim: Asset = claim_pricer.asset
    T = model.horizon
    if not math.isclose(claim.maturity, T, rel_tol=0, abs_tol=1e-12):
        raise ConfigError(f"claim maturity {claim.maturity} differs from the horizon {T}")
    if len(pricers) != model.d:
        raise ConfigError(f"need exactly d={model.d} assets, got {len(pricers)}")
    if rebalance_steps < 1 or paths.n_steps % rebalance_steps:
        raise ConfigError(f"rebalance steps {rebalance_steps} must divide the path grid of {paths.n_steps}")
    every = paths.n_steps // rebalance_steps
    times = paths.times[::every]
    xs = paths.states[:, ::every]
    tt = np.broadcast_to(times, xs.shape[:-1])
    disc = np.exp(-model.rate * times)[None, :]

    prices = np.stack([np.asarray(p.price(tt, xs), dtype=float) for p in pricers], axis=-1)
    disc_prices = prices * disc[..., None]

    G = jacobian(pricers, tt[:, :-1], xs[:, :-1])
    chi = representation_integrand(claim_pricer, tt[:, :-1], xs[:, :-1])
    alpha, singular, truncated = hedge_ratios(G, chi, singular_tol, pinv_tol)

    x0 = float(claim_pricer.price(0.0, model.x0_array[None, :])[0])
    gains = np.sum(alpha * np.diff(disc_prices, axis=1), axis=-1)
    wealth = np.empty((paths.n_paths, rebalance_steps + 1))
    wealth[:, 0] = x0
    for j in range(rebalance_steps):
        wealth[:, j + 1] = wealth[:, j] + gains[:, j]
    payoff = claim.evaluate(paths.states[:, -1], model.price_index)
    error = payoff - math.exp(model.rate * T) * wealth[:, -1]
    return HedgeReport(error, singular.sum(axis=1), truncated.sum(axis=1), rebalance_steps,
                       T / rebalance_steps, x0, alpha, disc_prices, wealth)


def convergence_slope(reports: Sequence[HedgeReport]) -> float:
    """Least-squares slope of log RMS error against log rebalance interval."""
    dt = np.array([r.dt for r in reports])
    rms = np.array([r.rms_error for r in reports])
    return float(np.polyfit(np.log(dt), np.log(rms), 1)[0])


def hedge_sweep(model, pricers, claim_pricer, paths, steps: Sequence[int], **kw) -> tuple[list[HedgeReport], float]:
    reports = [replicate(model, pricers, claim_pricer, paths, s, **kw) for s in steps]
    return reports, convergence_slope(reports)


# ---------------------------------------------------------------------------
# variance swaps

def _require_stock(model: FactorModel) -> int:
    if model.price_index is None:
        raise ConfigError("variance swaps need a model with a designated log-price coordinate")
    return model.price_index


def varswap_log_contract(model: FactorModel, T: float) -> Asset:
    """Log contract paying ``log(S_T / S_0) - r T`` (log of the discounted stock)."""
    p = _require_stock(model)
    return log_contract(T, s_ref=math.exp(model.x0[p]), offset=-model.rate * T)


def varswap_price(model: FactorModel, T: float | None = None, t: float = 0.0, x=None, accrued: float = 0.0,
                  backend: str = "auto", log_pricer=None, grid=None) -> float:
    """Fair value of a variance swap paying realised ``<log S>_T``.

    ``V_t = 2 e^{-r(T-t)} * accrued - 2 * LC(t, x)`` where ``accrued`` is
    ``int_0^t dS~/S~`` along the realised path and ``LC`` prices the log
    contract of :func:`varswap_log_contract`.
    """
    _require_stock(model)
    T = model.horizon if T is None else T
    if t > T:
        raise ConfigError(f"t={t} is after the swap maturity {T}")
    x = model.x0_array if x is None else np.asarray(x, dtype=float)
    if log_pricer is None:
        log_pricer = make_pricer(model, varswap_log_contract(model, T), backend, grid=grid)
    lc = float(np.asarray(log_pricer.price(t, x[None, :]))[0])
    return 2.0 * math.exp(-model.rate * (T - t)) * accrued - 2.0 * lc


def accrued_log_gains(paths: PathSet) -> np.ndarray:
    """Left-point sums ``sum dS~ / S~`` along each path, shape ``(N, K+1)``."""
    p = _require_stock(paths.model)
    ds = np.exp(paths.states[:, :, p] - paths.model.rate * paths.times[None, :])
    ret = np.diff(ds, axis=1) / ds[:, :-1]
    out = np.zeros_like(ds)
    np.cumsum(ret, axis=1, out=out[:, 1:])
    return out


def varswap_terminal(paths: PathSet) -> np.ndarray:
    """Pathwise ``V_T``: accrued leg at maturity minus twice the log-contract payoff."""
    model = paths.model
    p = _require_stock(model)
    T = paths.times[-1]
    acc = accrued_log_gains(paths)[:, -1]
    log_ret = paths.states[:, -1, p] - model.x0[p] - model.rate * T
    return 2.0 * acc - 2.0 * log_ret


def varswap_gradient_row(grad_stock: np.ndarray, v1: float, grad_log: np.ndarray, t: float, T: float,
                         r: float) -> np.ndarray:
    return 2.0 * math.exp(-r * (T - t)) / v1 * np.asarray(grad_stock) - 2.0 * np.asarray(grad_log)


def varswap_rank_check(G, v1: float, t: float, T: float, r: float,
                       tolerance: float = DEFAULT_TOLERANCE) -> tuple[int, int, bool]:
    """Rank of ``G`` before and after swapping the log-contract row (last)
    for the variance-swap row built from the stock row (first)."""
    if not v1 > 0:
        raise ConfigError(f"stock price must be positive, got {v1}")
    mat = np.array(G.G if isinstance(G, JacobianEvaluation) else G, dtype=float)
    before = numerical_rank(mat, tolerance)
    mat[-1] = varswap_gradient_row(mat[0], v1, mat[-1], t, T, r)
    after = numerical_rank(mat, tolerance)
    return before, after, before == after

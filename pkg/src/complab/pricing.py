"""Assets and pricing backends.

Every backend exposes the same small surface used by the completeness and
hedging code::

    pricer.asset, pricer.model
    pricer.price(t, x)     # x of shape (..., d) -> (...)
    pricer.gradient(t, x)  # x of shape (..., d) -> (..., d)

Backends: :class:`ClosedFormPricer` (analytic), :class:`MCPricer`
(simulation, bump-and-reprice gradients) and
:class:`complab.pde.PricingSurface` (Crank-Nicolson).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from complab.errors import ConfigError, DomainError, NumericalError
from complab.factor_models import FactorModel
from complab.paths import euler_paths
from complab.rng import PRICING_STREAM, path_normals

ASSET_KINDS = ("european_factor", "european_stock", "log_contract", "portfolio")
FACTOR_PAYOFFS = ("square", "call", "put", "affine")
STOCK_PAYOFFS = ("stock", "affine", "call", "put")

# relative size of finite-difference bumps for MC gradients
DEFAULT_BUMP = 1e-4


@dataclass(frozen=True)
class Asset:
    """European asset paying ``h(xi_T)`` at ``maturity``.

    ``european_factor`` payoffs act on factor ``coordinate`` (0-based);
    ``european_stock`` payoffs act on ``s = exp(xi[price_index])``;
    ``log_contract`` pays ``log(s / s_ref) + offset``; ``portfolio`` is a
    weighted sum of same-maturity components.
    """

    kind: str
    payoff: str
    maturity: float
    strike: float | None = None
    coordinate: int = 0
    a: float = 0.0
    b: float = 1.0
    s_ref: float = 1.0
    offset: float = 0.0
    components: tuple = ()
    fn: Callable | None = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ASSET_KINDS and self.kind != "custom":
            raise ConfigError(f"unknown asset kind {self.kind!r}")
        if self.kind == "european_factor" and self.payoff not in FACTOR_PAYOFFS:
            raise ConfigError(f"unknown factor payoff {self.payoff!r}")
        if self.kind == "european_stock" and self.payoff not in STOCK_PAYOFFS:
            raise ConfigError(f"unknown stock payoff {self.payoff!r}")
        if self.payoff in ("call", "put") and self.strike is None:
            raise ConfigError(f"{self.payoff} needs a strike")
        if self.kind == "log_contract" and not self.s_ref > 0:
            raise ConfigError("log contract reference level must be positive")
        if self.kind == "custom" and self.fn is None:
            raise ConfigError("custom asset needs a payoff function")
        if self.kind == "portfolio":
            if not self.components:
                raise ConfigError("portfolio needs components")
            for _, comp in self.components:
                if comp.maturity != self.maturity:
                    raise ConfigError("portfolio components must share the portfolio maturity")
        if not self.maturity >= 0:
            raise ConfigError(f"maturity must be non-negative, got {self.maturity}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "portfolio":
            return " + ".join(f"{w:g}*{c.label}" for w, c in self.components)
        if self.payoff in ("call", "put"):
            return f"{self.payoff}{self.strike:g}"
        if self.kind == "european_factor":
            return f"{self.payoff}_x{self.coordinate + 1}"
        return self.payoff

    @property
    def on_stock(self) -> bool:
        if self.kind == "portfolio":
            return all(c.on_stock for _, c in self.components)
        return self.kind == "european_stock"

    def evaluate(self, x, price_index: int | None = None) -> np.ndarray:
        """Payoff at terminal factor values ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "portfolio":
            return sum(w * c.evaluate(x, price_index) for w, c in self.components)
        if self.kind == "custom":
            return np.asarray(self.fn(x), dtype=float)
        if self.kind == "european_factor":
            z = x[..., self.coordinate]
        else:
            if price_index is None:
                raise ConfigError(f"{self.kind} asset needs a model with a price coordinate")
            if self.kind == "log_contract":
                return x[..., price_index] - math.log(self.s_ref) + self.offset
            z = np.exp(x[..., price_index])
        if self.payoff == "square":
            return z * z
        if self.payoff == "call":
            return np.maximum(z - self.strike, 0.0)
        if self.payoff == "put":
            return np.maximum(self.strike - z, 0.0)
        if self.payoff == "affine":
            return self.a + self.b * z
        if self.payoff == "stock":
            return z
        raise ConfigError(f"cannot evaluate payoff {self.payoff!r}")


def stock(maturity: float) -> Asset:
    return Asset("european_stock", "stock", maturity)


def log_contract(maturity: float, s_ref: float, offset: float = 0.0) -> Asset:
    return Asset("log_contract", "log", maturity, s_ref=s_ref, offset=offset)


def portfolio(weighted, maturity: float | None = None) -> Asset:
    weighted = tuple((float(w), a) for w, a in weighted)
    mat = weighted[0][1].maturity if maturity is None else maturity
    return Asset("portfolio", "portfolio", mat, components=weighted)


# ---------------------------------------------------------------------------
# closed forms

def _bachelier(x, strike, var, kind):
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (x - strike) / sd
    pdf = np.exp(-0.5 * d * d) / math.sqrt(2 * math.pi)
    if kind == "call":
        val = (x - strike) * ndtr(d) + sd * pdf
        return np.where(var > 0, val, np.maximum(x - strike, 0.0))
    val = (strike - x) * ndtr(-d) + sd * pdf
    return np.where(var > 0, val, np.maximum(strike - x, 0.0))


def _bachelier_delta(x, strike, var, kind):
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (x - strike) / np.sqrt(var)
    if kind == "call":
        return np.where(var > 0, ndtr(d), (x > strike).astype(float))
    return np.where(var > 0, -ndtr(-d), -(x < strike).astype(float))


def closed_form_heat(tag: str, sigma, t: float, x, T: float, strike: float = 0.0) -> float:
    """Price under ``xi = x + sigma W`` with zero rate.

    ``tag`` is ``square_coordinate_<i>`` (1-based ``i``), ``call_on_factor1``
    or ``put_on_factor1``.  Squares give ``x_i^2 + (sigma sigma^T)_ii (T-t)``;
    options on factor 1 use the Bachelier formula with variance
    ``(sigma sigma^T)_11 (T-t)``.
    """
    s = np.atleast_2d(np.asarray(sigma, dtype=float))
    cov = s @ s.T
    x = np.asarray(x, dtype=float)
    tau = T - t
    if tau < 0:
        raise DomainError(f"t={t} is past maturity {T}")
    if tag.startswith("square_coordinate_"):
        i = int(tag.rsplit("_", 1)[1]) - 1
        if not 0 <= i < len(x):
            raise ConfigError(f"coordinate out of range in {tag!r}")
        return float(x[i] ** 2 + cov[i, i] * tau)
    if tag in ("call_on_factor1", "put_on_factor1"):
        return float(_bachelier(x[0], strike, cov[0, 0] * tau, tag[:tag.index("_")]))
    raise ConfigError(f"unsupported closed-form tag {tag!r}")


def black_scholes(s, strike, r, vol, tau, kind="call"):
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    sd = vol * np.sqrt(tau)
    disc = np.exp(-r * tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(s / strike) + r * tau) / sd + 0.5 * sd
    d2 = d1 - sd
    if kind == "call":
        val = s * ndtr(d1) - strike * disc * ndtr(d2)
        return np.where(tau > 0, val, np.maximum(s - strike, 0.0))
    val = strike * disc * ndtr(-d2) - s * ndtr(-d1)
    return np.where(tau > 0, val, np.maximum(strike - s, 0.0))


def black_scholes_delta(s, strike, r, vol, tau, kind="call"):
    s = np.asarray(s, dtype=float)
    tau = np.asarray(tau, dtype=float)
    sd = vol * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(s / strike) + r * tau) / sd + 0.5 * sd
    if kind == "call":
        return np.where(tau > 0, ndtr(d1), (s > strike).astype(float))
    return np.where(tau > 0, ndtr(d1) - 1.0, -(s < strike).astype(float))


def closed_form_available(model: FactorModel, asset: Asset) -> bool:
    if asset.kind == "portfolio":
        return all(closed_form_available(model, c) for _, c in asset.components)
    if asset.kind == "european_factor":
        return model.family == "correlated_bm"
    if asset.kind == "european_stock":
        if model.price_index is None:
            return False
        return asset.payoff in ("stock", "affine") or model.family == "gbm"
    if asset.kind == "log_contract":
        return model.family == "gbm"
    return False


class ClosedFormPricer:
    """Analytic prices and gradients.

    Covers factor payoffs under ``correlated_bm``, every stock payoff and the
    log contract under ``gbm``, and the model-free stock/affine payoffs under
    any model with a price coordinate.
    """

    backend = "closed_form"

    def __init__(self, model: FactorModel, asset: Asset):
        if not closed_form_available(model, asset):
            raise ConfigError(f"no closed form for {asset.label} under {model.family}")
        self.model = model
        self.asset = asset
        if asset.kind == "portfolio":
            self._parts = [(w, ClosedFormPricer(model, c)) for w, c in asset.components]

    def _tau(self, t, x):
        tau = self.asset.maturity - np.asarray(t, dtype=float)
        if np.any(tau < 0):
            raise DomainError("evaluation time past maturity")
        return np.broadcast_to(tau, np.shape(x)[:-1])

    def price(self, t, x):
        x = np.asarray(x, dtype=float)
        a, m = self.asset, self.model
        if a.kind == "portfolio":
            return sum(w * p.price(t, x) for w, p in self._parts)
        tau = self._tau(t, x)
        disc = np.exp(-m.rate * tau)
        if a.kind == "european_factor":
            z = x[..., a.coordinate]
            var = np.asarray(m.params["sigma"])
            var = (var @ var.T)[a.coordinate, a.coordinate] * tau
            if a.payoff == "square":
                return disc * (z * z + var)
            if a.payoff == "affine":
                return disc * (a.a + a.b * z)
            return disc * _bachelier(z, a.strike, var, a.payoff)
        p = m.price_index
        if a.kind == "log_contract":
            vol = m.params["sigma"]
            return disc * (x[..., p] - math.log(a.s_ref) + (m.rate - 0.5 * vol * vol) * tau + a.offset)
        s = np.exp(x[..., p])
        if a.payoff == "stock":
            return s
        if a.payoff == "affine":
            return a.a * disc + a.b * s
        return black_scholes(s, a.strike, m.rate, m.params["sigma"], tau, a.payoff)

    def gradient(self, t, x):
        x = np.asarray(x, dtype=float)
        a, m = self.asset, self.model
        if a.kind == "portfolio":
            return sum(w * p.gradient(t, x) for w, p in self._parts)
        tau = self._tau(t, x)
        disc = np.exp(-m.rate * tau)
        out = np.zeros(x.shape)
        if a.kind == "european_factor":
            c = a.coordinate
            z = x[..., c]
            if a.payoff == "square":
                out[..., c] = disc * 2.0 * z
            elif a.payoff == "affine":
                out[..., c] = disc * a.b
            else:
                sig = np.asarray(m.params["sigma"])
                var = (sig @ sig.T)[c, c] * tau
                out[..., c] = disc * _bachelier_delta(z, a.strike, var, a.payoff)
            return out
        p = m.price_index
        if a.kind == "log_contract":
            out[..., p] = disc
            return out
        s = np.exp(x[..., p])
        if a.payoff == "stock":
            out[..., p] = s
        elif a.payoff == "affine":
            out[..., p] = a.b * s
        else:
            out[..., p] = s * black_scholes_delta(s, a.strike, m.rate, m.params["sigma"], tau, a.payoff)
        return out


# ---------------------------------------------------------------------------
# Monte Carlo

_EXACT_EULER = ("correlated_bm", "gbm")


def _default_steps(model: FactorModel, tau: float) -> int:
    if model.family in _EXACT_EULER and model.time_homogeneous:
        return 1
    return max(1, int(math.ceil(200 * tau / max(model.horizon, tau))))


def _terminal_payoffs(model, asset, t, x_starts, normals, n_steps):
    tau = asset.maturity - t
    dt = tau / n_steps
    dW = normals * math.sqrt(dt)
    states, _ = euler_paths(model, t, x_starts, dW, dt)
    xt = states[:, -1]
    pay = asset.evaluate(xt, model.price_index)
    bad = ~np.isfinite(pay)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NumericalError(f"payoff of {asset.label} is not finite at sample {i}, xi_T={xt[i].tolist()}")
    return math.exp(-model.rate * tau) * pay


def price_mc(model: FactorModel, asset: Asset, t: float, x, n_samples: int = 10_000,
             seed: int = 0, n_steps: int | None = None) -> tuple[float, float]:
    """Discounted expected payoff from ``(t, x)``: ``(mean, standard error)``."""
    if n_samples < 100:
        raise ConfigError("n_samples must be at least 100")
    x = np.asarray(x, dtype=float)
    if not model.inside(x):
        raise DomainError(f"x={x.tolist()} outside the domain")
    tau = asset.maturity - t
    if tau < 0:
        raise DomainError(f"t={t} is past maturity {asset.maturity}")
    if tau == 0:
        return float(asset.evaluate(x, model.price_index)), 0.0
    n_steps = n_steps or _default_steps(model, tau)
    z = path_normals(seed, n_samples, n_steps, model.d, stream=PRICING_STREAM)
    disc = _terminal_payoffs(model, asset, t, x, z, n_steps)
    return float(disc.mean()), float(disc.std(ddof=1) / math.sqrt(n_samples))


@dataclass
class GradientEstimate:
    value: np.ndarray
    stderr: np.ndarray
    flagged: bool


class MCPricer:
    """Monte Carlo pricer; gradients by central bump-and-reprice with common
    random numbers.  Pointwise, so slow on path clouds."""

    backend = "mc"

    def __init__(self, model: FactorModel, asset: Asset, n_samples: int = 20_000, seed: int = 0,
                 n_steps: int | None = None, bump: float = DEFAULT_BUMP):
        self.model = model
        self.asset = asset
        self.n_samples = n_samples
        self.seed = seed
        self.n_steps = n_steps
        self.bump = bump

    def _pointwise(self, fn, t, x, width):
        x = np.asarray(x, dtype=float)
        tt = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        flat_x = x.reshape(-1, x.shape[-1])
        flat_t = tt.reshape(-1)
        out = np.array([fn(float(ti), xi) for ti, xi in zip(flat_t, flat_x)])
        return out.reshape(x.shape[:-1] + width)

    def price(self, t, x):
        return self._pointwise(lambda ti, xi: price_mc(self.model, self.asset, ti, xi, self.n_samples,
                                                       self.seed, self.n_steps)[0], t, x, ())

    def gradient_estimate(self, t: float, x, bump: float | None = None) -> GradientEstimate:
        x = np.asarray(x, dtype=float)
        m, a = self.model, self.asset
        tau = a.maturity - t
        if tau <= 0:
            raise DomainError("MC gradient needs t strictly before maturity")
        rel = self.bump if bump is None else bump
        n_steps = self.n_steps or _default_steps(m, tau)
        z = path_normals(self.seed, self.n_samples, n_steps, m.d, stream=PRICING_STREAM)
        grad = np.empty(m.d)
        err = np.empty(m.d)
        for j in range(m.d):
            h = max(rel, rel * abs(x[j]))
            up, dn = x.copy(), x.copy()
            up[j] += h
            dn[j] -= h
            diff = (_terminal_payoffs(m, a, t, up, z, n_steps) - _terminal_payoffs(m, a, t, dn, z, n_steps)) / (2 * h)
            grad[j] = diff.mean()
            err[j] = diff.std(ddof=1) / math.sqrt(self.n_samples)
        flagged = bool(np.linalg.norm(err) > 0.1 * np.linalg.norm(grad))
        return GradientEstimate(grad, err, flagged)

    def gradient(self, t, x):
        return self._pointwise(lambda ti, xi: self.gradient_estimate(ti, xi).value, t, x, (self.model.d,))


def gradient(backend, t: float, x) -> np.ndarray:
    """``grad v(t, x)`` from any pricing backend (single point)."""
    x = np.asarray(x, dtype=float)
    if isinstance(backend, MCPricer):
        return backend.gradient_estimate(t, x).value
    return np.asarray(backend.gradient(t, x), dtype=float)


def make_pricer(model: FactorModel, asset: Asset, backend: str = "auto", grid=None, **kwargs):
    """Pick a backend: ``auto`` prefers closed forms, then the PDE solver."""
    if backend == "auto":
        backend = "closed_form" if closed_form_available(model, asset) else "pde"
    if backend == "closed_form":
        return ClosedFormPricer(model, asset)
    if backend == "mc":
        return MCPricer(model, asset, **kwargs)
    if backend == "pde":
        from complab.pde import default_grid, solve_pde

        return solve_pde(model, asset, grid or default_grid(model, asset))
    raise ConfigError(f"unknown pricing backend {backend!r}")

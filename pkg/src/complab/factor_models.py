"""Factor diffusions ``dxi = m(t, xi) dt + sigma(t, xi) dW`` and built-in families.

Coefficient functions are vectorised: ``drift(t, x)`` maps ``x`` of shape
``(..., d)`` to ``(..., d)`` and ``diffusion(t, x)`` maps it to
``(..., d, d)``.  ``t`` is a scalar or an array broadcastable against
``x[..., 0]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from complab.errors import ConfigError, DomainError

CoefficientFn = Callable[[object, np.ndarray], np.ndarray]
ScalarFn = Callable[[object, np.ndarray, np.ndarray], np.ndarray]

DEFAULT_ELLIPTICITY_FLOOR = 1e-12
BUILTIN_FAMILIES = ("correlated_bm", "gbm", "expou_sv")


@dataclass(frozen=True)
class FactorModel:
    """Immutable description of a d-factor diffusion on an axis-aligned box.

    ``price_index`` names the coordinate that holds log S when the model has
    a designated stock; ``None`` for pure factor models.
    """

    d: int
    drift: CoefficientFn
    diffusion: CoefficientFn
    rate: float
    x0: tuple[float, ...]
    horizon: float
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()
    family: str = "custom"
    params: Mapping[str, object] = field(default_factory=dict)
    price_index: int | None = None
    time_homogeneous: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"dimension must be positive, got {self.d}")
        if len(self.x0) != self.d:
            raise ConfigError(f"x0 has {len(self.x0)} entries, expected {self.d}")
        if not self.lower:
            object.__setattr__(self, "lower", (-math.inf,) * self.d)
        if not self.upper:
            object.__setattr__(self, "upper", (math.inf,) * self.d)
        if len(self.lower) != self.d or len(self.upper) != self.d:
            raise ConfigError("domain bounds must have one entry per factor")
        if self.rate < 0:
            raise ConfigError(f"rate must be non-negative, got {self.rate}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        lo, hi, x0 = self.lower_array, self.upper_array, self.x0_array
        if np.any(lo >= hi):
            raise ConfigError("domain box is empty or inverted")
        if not (np.all(x0 > lo) and np.all(x0 < hi)):
            raise ConfigError(f"x0={self.x0} is not strictly inside the domain")

    @property
    def x0_array(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    @property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @property
    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @property
    def has_finite_box(self) -> bool:
        return bool(np.any(np.isfinite(self.lower_array)) or np.any(np.isfinite(self.upper_array)))

    def inside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x > self.lower_array) & (x < self.upper_array), axis=-1)

    def covariance(self, t, x) -> np.ndarray:
        s = self.diffusion(t, np.asarray(x, dtype=float))
        return s @ np.swapaxes(s, -1, -2)


@dataclass(frozen=True)
class StochVolModel:
    """Stock and volatility driver ``(S, Y)`` under the pricing measure.

    ``dS = r S dt + vol(t,S,Y) S dW1`` and
    ``dY = eta(t,S,Y) dt + gamma(t,S,Y) (rho dW1 + sqrt(1-rho^2) dW2)``.
    """

    vol_of_stock: ScalarFn
    vol_drift: ScalarFn
    vol_vol: ScalarFn
    correlation: ScalarFn
    s0: float
    y0: float
    rate: float
    horizon: float
    family: str = "custom_sv"
    params: Mapping[str, object] = field(default_factory=dict)
    time_homogeneous: bool = False

    def to_factor_model(self) -> FactorModel:
        """Log-coordinate form ``xi = (log S, Y)``."""
        if not self.s0 > 0:
            raise ConfigError(f"s0 must be positive, got {self.s0}")
        r = self.rate
        vol, eta, gam, corr = self.vol_of_stock, self.vol_drift, self.vol_vol, self.correlation

        def drift(t, x):
            x = np.asarray(x, dtype=float)
            s, y = np.exp(x[..., 0]), x[..., 1]
            sig = vol(t, s, y)
            out = np.empty(x.shape)
            out[..., 0] = r - 0.5 * sig * sig
            out[..., 1] = eta(t, s, y)
            return out

        def diffusion(t, x):
            x = np.asarray(x, dtype=float)
            s, y = np.exp(x[..., 0]), x[..., 1]
            g = gam(t, s, y)
            rho = corr(t, s, y)
            out = np.zeros(x.shape + (2,))
            out[..., 0, 0] = vol(t, s, y)
            out[..., 1, 0] = g * rho
            out[..., 1, 1] = g * np.sqrt(1.0 - rho * rho)
            return out

        return FactorModel(
            d=2, drift=drift, diffusion=diffusion, rate=r,
            x0=(math.log(self.s0), float(self.y0)), horizon=self.horizon,
            family=self.family, params=dict(self.params), price_index=0,
            time_homogeneous=self.time_homogeneous,
        )


@dataclass
class ModelValidationReport:
    probed_points: list
    min_eigenvalue_ratio: float
    passed: bool
    failures: list
    floor: float = DEFAULT_ELLIPTICITY_FLOOR

    def to_dict(self) -> dict:
        return {
            "n_probes": len(self.probed_points),
            "min_eigenvalue_ratio": self.min_eigenvalue_ratio,
            "passed": self.passed,
            "floor": self.floor,
            "failures": [{"t": t, "x": list(x), "reason": why} for t, x, why in self.failures],
        }


@dataclass(frozen=True)
class ProbePlan:
    """Where to evaluate coefficients.

    ``kind="grid"``: tensor grid with ``n_per_axis`` nodes on ``[lower, upper]``
    at each of ``times``.  ``kind="paths"``: ``n_points`` (t, x) samples taken
    uniformly from simulated paths.
    """

    kind: str = "paths"
    n_points: int = 1000
    n_paths: int = 200
    n_steps: int = 50
    seed: int = 0
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None
    n_per_axis: int = 5
    times: tuple[float, ...] | None = None

    def points(self, model: FactorModel) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "grid":
            lo = np.asarray(self.lower if self.lower is not None else model.x0_array - 3.0, dtype=float)
            hi = np.asarray(self.upper if self.upper is not None else model.x0_array + 3.0, dtype=float)
            axes = [np.linspace(lo[j], hi[j], self.n_per_axis) for j in range(model.d)]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.d)
            times = self.times if self.times is not None else (0.0, 0.5 * model.horizon, model.horizon)
            ts = np.repeat(np.asarray(times, dtype=float), len(mesh))
            xs = np.tile(mesh, (len(times), 1))
            return ts, xs
        if self.kind == "paths":
            from complab.paths import simulate_paths
            from complab.rng import uniform_draws

            paths = simulate_paths(model, self.n_paths, self.n_steps, self.seed)
            u = uniform_draws(self.seed, (self.n_points, 2))
            n = np.minimum((u[:, 0] * self.n_paths).astype(int), self.n_paths - 1)
            k = np.minimum((u[:, 1] * (self.n_steps + 1)).astype(int), self.n_steps)
            return paths.times[k], paths.states[n, k]
        raise ConfigError(f"unknown probe kind {self.kind!r}")


def _constant_matrix(sigma, d: int | None) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        s = s * np.eye(d or 1)
    elif s.ndim == 1:
        s = np.diag(s)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ConfigError(f"sigma must be a square matrix, got shape {s.shape}")
    if d is not None and s.shape[0] != d:
        raise ConfigError(f"sigma is {s.shape[0]}x{s.shape[0]} but d={d}")
    return s


def _require(params: Mapping, *names):
    missing = [n for n in names if n not in params]
    if missing:
        raise ConfigError(f"missing parameters: {', '.join(missing)}")


def _correlated_bm(params: Mapping, horizon: float) -> FactorModel:
    _require(params, "sigma")
    d = params.get("d")
    sigma = _constant_matrix(params["sigma"], None if d is None else int(d))
    d = sigma.shape[0]
    cov = sigma @ sigma.T
    eig = np.linalg.eigvalsh(cov)
    if not eig[0] > DEFAULT_ELLIPTICITY_FLOOR * eig[-1]:
        raise ConfigError("sigma for correlated_bm is not positive definite (singular sigma sigma^T)")
    x0 = tuple(float(v) for v in params.get("x0", np.zeros(d)))
    r = float(params.get("r", 0.0))

    def drift(t, x):
        return np.zeros(np.shape(x))

    def diffusion(t, x):
        return np.broadcast_to(sigma, np.shape(x)[:-1] + (d, d)).copy()

    return FactorModel(d=d, drift=drift, diffusion=diffusion, rate=r, x0=x0, horizon=horizon,
                       family="correlated_bm", params={"sigma": sigma.tolist(), "x0": list(x0), "r": r},
                       time_homogeneous=True)


def _gbm(params: Mapping, horizon: float) -> FactorModel:
    _require(params, "s0", "sigma")
    s0, vol, r = float(params["s0"]), float(params["sigma"]), float(params.get("r", 0.0))
    if not s0 > 0:
        raise ConfigError(f"s0 must be positive, got {s0}")
    if not vol > 0:
        raise ConfigError(f"sigma must be positive, got {vol}")
    mu = r - 0.5 * vol * vol

    def drift(t, x):
        return np.full(np.shape(x), mu)

    def diffusion(t, x):
        return np.full(np.shape(x) + (1,), vol)

    return FactorModel(d=1, drift=drift, diffusion=diffusion, rate=r, x0=(math.log(s0),), horizon=horizon,
                       family="gbm", params={"s0": s0, "sigma": vol, "r": r}, price_index=0,
                       time_homogeneous=True)


def expou_sv(s0: float, y0: float, kappa: float, theta: float, gamma: float, rho: float,
             r: float = 0.0, horizon: float = 1.0) -> StochVolModel:
    """Exponential Ornstein-Uhlenbeck volatility: ``vol = exp(Y)``,
    ``dY = kappa (theta - Y) dt + gamma dW~``."""
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if not abs(rho) < 1:
        raise ConfigError(f"|rho| must be < 1, got {rho}")
    return StochVolModel(
        vol_of_stock=lambda t, s, y: np.exp(y),
        vol_drift=lambda t, s, y: kappa * (theta - y),
        vol_vol=lambda t, s, y: np.full(np.shape(y), gamma),
        correlation=lambda t, s, y: np.full(np.shape(y), rho),
        s0=s0, y0=y0, rate=r, horizon=horizon, family="expou_sv",
        params={"s0": s0, "y0": y0, "kappa": kappa, "theta": theta, "gamma": gamma, "rho": rho, "r": r},
        time_homogeneous=True,
    )


def _expou_sv(params: Mapping, horizon: float) -> FactorModel:
    _require(params, "s0", "y0", "kappa", "theta", "gamma", "rho")
    p = {k: float(params[k]) for k in ("s0", "y0", "kappa", "theta", "gamma", "rho")}
    return expou_sv(**p, r=float(params.get("r", 0.0)), horizon=horizon).to_factor_model()


def make_builtin_model(name: str, params: Mapping, horizon: float = 1.0) -> FactorModel:
    """Build one of the shipped model families.

    Parameters
    ----------
    name : {"correlated_bm", "gbm", "expou_sv"}
    params : mapping
        ``correlated_bm``: ``sigma`` (matrix, vector of scales or scalar with
        ``d``), optional ``x0`` and ``r``.  ``gbm``: ``s0``, ``sigma``, ``r``.
        ``expou_sv``: ``s0, y0, kappa, theta, gamma, rho, r``.
    horizon : float
        Analysis horizon T.
    """
    builders = {"correlated_bm": _correlated_bm, "gbm": _gbm, "expou_sv": _expou_sv}
    if name not in builders:
        raise ConfigError(f"unknown model family {name!r}; expected one of {BUILTIN_FAMILIES}")
    return builders[name](params, float(horizon))


def eval_coefficients(model: FactorModel, t: float, x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.d,):
        raise DomainError(f"expected a {model.d}-vector, got shape {x.shape}")
    if not 0.0 <= t <= model.horizon:
        raise DomainError(f"t={t} outside [0, {model.horizon}]")
    if not model.inside(x):
        raise DomainError(f"x={x.tolist()} outside the domain box")
    return np.asarray(model.drift(t, x), dtype=float), np.asarray(model.diffusion(t, x), dtype=float)


def eigenvalue_ratios(model: FactorModel, ts, xs) -> np.ndarray:
    """lambda_min / lambda_max of sigma sigma^T at each probe (nan if non-finite)."""
    cov = model.covariance(np.asarray(ts), np.asarray(xs))
    ok = np.all(np.isfinite(cov), axis=(-1, -2))
    eig = np.full(cov.shape[:-1], np.nan)
    if np.any(ok):
        eig[ok] = np.linalg.eigvalsh(cov[ok])
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = eig[..., 0] / eig[..., -1]
    return np.where(np.isfinite(ratio), ratio, np.nan)


def validate_ellipticity(model: FactorModel, probes: ProbePlan | None = None,
                         floor: float = DEFAULT_ELLIPTICITY_FLOOR) -> ModelValidationReport:
    probes = probes or ProbePlan()
    ts, xs = probes.points(model)
    ratios = eigenvalue_ratios(model, ts, xs)
    drift = np.asarray(model.drift(ts, xs))
    finite_drift = np.all(np.isfinite(drift), axis=-1)

    failures = []
    for i in range(len(ts)):
        if not finite_drift[i]:
            failures.append((float(ts[i]), tuple(xs[i].tolist()), "non-finite drift"))
        elif not np.isfinite(ratios[i]):
            failures.append((float(ts[i]), tuple(xs[i].tolist()), "non-finite diffusion"))
        elif not ratios[i] > floor:
            failures.append((float(ts[i]), tuple(xs[i].tolist()), f"eigenvalue ratio {ratios[i]:.3e}"))
    # any non-finite coefficient poisons the ratio so that passed <=> ratio > floor
    if np.all(np.isfinite(ratios)) and np.all(finite_drift):
        min_ratio = float(ratios.min())
    else:
        min_ratio = float("nan")
    points = [(float(t), tuple(x.tolist())) for t, x in zip(ts, xs)]
    return ModelValidationReport(points, min_ratio, not failures, failures, floor)

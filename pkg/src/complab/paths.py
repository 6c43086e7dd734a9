"""Euler-Maruyama trajectories of the factor process with recorded increments."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from complab.errors import ConfigError
from complab.factor_models import FactorModel
from complab.rng import PATH_STREAM, path_normals

log = logging.getLogger(__name__)

# share of clamped paths above which a PathSet carries a warning
BOUNDARY_WARNING_SHARE = 1e-3


def euler_step(model: FactorModel, t, x: np.ndarray, dw: np.ndarray, dt: float) -> np.ndarray:
    """One step ``x + m dt + sigma dw``.

    The matrix-vector product is an explicit sum over columns so that the
    result is bit-identical whether ``x`` holds one path or many.
    """
    mu = model.drift(t, x)
    sig = model.diffusion(t, x)
    noise = sig[..., :, 0] * dw[..., 0:1]
    for j in range(1, model.d):
        noise = noise + sig[..., :, j] * dw[..., j:j + 1]
    return x + mu * dt + noise


def _clamp(model: FactorModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = model.lower_array, model.upper_array
    out = (x <= lo) | (x >= hi)
    hit = np.any(out, axis=-1)
    if np.any(hit):
        x = np.clip(x, lo, hi)
    return x, hit


def euler_paths(model: FactorModel, t0: float, x_start: np.ndarray, dW: np.ndarray,
                dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Integrate from ``x_start`` (``(d,)`` or ``(N, d)``) with increments ``dW`` ``(N, K, d)``.

    Returns states ``(N, K+1, d)`` and a per-path flag for boundary clamping.
    """
    n, k_steps, d = dW.shape
    states = np.empty((n, k_steps + 1, d))
    states[:, 0] = x_start
    flagged = np.zeros(n, dtype=bool)
    x = states[:, 0]
    for k in range(k_steps):
        x = euler_step(model, t0 + k * dt, x, dW[:, k], dt)
        x, hit = _clamp(model, x)
        flagged |= hit
        states[:, k + 1] = x
    return states, flagged


@dataclass(frozen=True)
class PathSet:
    """Simulated trajectories on a uniform grid.

    ``states`` has shape ``(N, K+1, d)``, ``dW`` has shape ``(N, K, d)``.
    """

    model: FactorModel
    times: np.ndarray
    states: np.ndarray
    dW: np.ndarray
    seed: int
    flagged: np.ndarray
    warning: bool = False

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def model_id(self) -> str:
        return f"{self.model.family}:{id(self.model):x}"

    def replay(self) -> np.ndarray:
        """Re-run the Euler recursion from ``x0`` and the stored ``dW``."""
        states, _ = euler_paths(self.model, 0.0, self.model.x0_array, self.dW, self.dt)
        return states

    def subsample(self, every: int) -> "PathSet":
        """Coarser grid keeping every ``every``-th time; increments are summed."""
        if every < 1 or self.n_steps % every:
            raise ConfigError(f"{every} does not divide {self.n_steps} steps")
        n, k, d = self.dW.shape
        dW = self.dW.reshape(n, k // every, every, d).sum(axis=2)
        return PathSet(self.model, self.times[::every], self.states[:, ::every], dW,
                       self.seed, self.flagged, self.warning)


def simulate_paths(model: FactorModel, n_paths: int, n_steps: int, seed: int,
                   workers: int | None = None) -> PathSet:
    """Euler-Maruyama on a uniform grid over ``[0, model.horizon]``.

    Paths leaving the domain box are clamped to it and flagged; when more
    than 0.1% of paths are flagged the PathSet carries ``warning=True``.
    """
    if n_paths < 1 or n_steps < 1:
        raise ConfigError("n_paths and n_steps must be at least 1")
    dt = model.horizon / n_steps
    times = np.linspace(0.0, model.horizon, n_steps + 1)
    dW = path_normals(seed, n_paths, n_steps, model.d, stream=PATH_STREAM, workers=workers)
    dW *= np.sqrt(dt)
    states, flagged = euler_paths(model, 0.0, model.x0_array, dW, dt)
    warning = flagged.mean() > BOUNDARY_WARNING_SHARE
    if warning:
        log.warning("%.2f%% of paths hit the domain boundary", 100 * flagged.mean())
    return PathSet(model, times, states, dW, seed, flagged, bool(warning))


@dataclass(frozen=True)
class QuadraticVariationTrack:
    """Running sum of squared log-price increments, shape ``(N, K+1)``."""

    times: np.ndarray
    values: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def quadratic_variation(paths: PathSet, price_index: int = 0) -> QuadraticVariationTrack:
    x = paths.states[:, :, price_index]
    inc = np.diff(x, axis=1)
    track = np.zeros_like(x)
    np.cumsum(inc * inc, axis=1, out=track[:, 1:])
    return QuadraticVariationTrack(paths.times, track)


def write_paths_csv(paths: PathSet, fh, include_dw: bool = False) -> None:
    """Long-format dump ``path,step,t,xi_1..xi_d[,dW_1..dW_d]``.

    The increment columns on row ``step`` hold the increment leading *into*
    that step (empty on step 0).
    """
    d = paths.model.d
    header = ["path", "step", "t"] + [f"xi_{j + 1}" for j in range(d)]
    if include_dw:
        header += [f"dW_{j + 1}" for j in range(d)]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for n in range(paths.n_paths):
        for k in range(paths.n_steps + 1):
            row = [n, k, repr(float(paths.times[k]))] + [repr(float(v)) for v in paths.states[n, k]]
            if include_dw:
                row += [""] * d if k == 0 else [repr(float(v)) for v in paths.dW[n, k - 1]]
            w.writerow(row)

"""Backward Kolmogorov solver for ``dv/dt + G_t v - r v = 0``, ``v(T_i) = h``.

Crank-Nicolson in time with Rannacher start-up (implicit half steps),
central differences in space on a tensor grid.  Mixed second derivatives
are taken explicitly so each step is one sparse solve without cross terms.

At the edges of the truncated box the second derivative in the asset's
natural variable is set to zero: ``v_xx = 0`` for factor payoffs and log
contracts, ``v_ss = 0`` (i.e. ``v_xx = v_x`` in log coordinates) along the
log-price axis for payoffs on the stock.  The conditions are imposed through
ghost nodes.
"""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import map_coordinates, spline_filter
from scipy.sparse.linalg import splu

from complab.errors import ConfigError, DomainError, NumericalError
from complab.factor_models import FactorModel
from complab.pricing import Asset

LINEAR = "linear"
EXP_LINEAR = "exp_linear"


@dataclass(frozen=True)
class GridSpec:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    nodes: tuple[int, ...]
    n_time_steps: int = 200
    rannacher_steps: int = 4
    # bound on dt * |a_ij| / (h_i h_j) for the explicit mixed terms
    cross_cfl: float = 1.0

    def __post_init__(self):
        if not (len(self.lower) == len(self.upper) == len(self.nodes)):
            raise ConfigError("grid bounds and node counts must have equal length")
        for lo, hi, n in zip(self.lower, self.upper, self.nodes):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ConfigError(f"grid box [{lo}, {hi}] is empty, inverted or unbounded")
            if n < 5:
                raise ConfigError("each axis needs at least 5 nodes")
        if self.n_time_steps < 1:
            raise ConfigError("n_time_steps must be positive")
        if self.rannacher_steps < 0 or self.rannacher_steps % 2:
            raise ConfigError("rannacher_steps must be a non-negative even number of half steps")
        if self.rannacher_steps // 2 > self.n_time_steps:
            raise ConfigError("more Rannacher half steps than time steps")

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.lower, self.upper, self.nodes)]

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1) for lo, hi, n in zip(self.lower, self.upper, self.nodes))


def default_grid(model: FactorModel, asset: Asset, nodes: int | None = None, n_std: float = 5.0,
                 n_time_steps: int = 200) -> GridSpec:
    """Box of ``n_std`` local standard deviations around ``x0`` over the asset's life.

    Variances are re-read at half the box width away from ``x0`` (largest
    value kept) so that state-dependent volatility widens the box.
    """
    tau = max(asset.maturity, 1e-12)
    x0 = model.x0_array
    half = n_std * np.sqrt(np.diag(model.covariance(0.0, x0)) * tau)
    for _ in range(2):
        probes = np.stack(np.meshgrid(*[(c - 0.5 * w, c, c + 0.5 * w) for c, w in zip(x0, half)],
                                      indexing="ij"), -1).reshape(-1, model.d)
        var = np.diagonal(model.covariance(0.0, probes), axis1=-2, axis2=-1).max(axis=0)
        half = np.maximum(half, n_std * np.sqrt(var * tau))
    lo = np.maximum(x0 - half, model.lower_array)
    hi = np.minimum(x0 + half, model.upper_array)
    nodes = nodes or (401 if model.d == 1 else 121)
    steps = n_time_steps
    grid = GridSpec(tuple(lo.tolist()), tuple(hi.tolist()), (nodes,) * model.d, steps)
    if model.d > 1:
        # respect the explicit mixed-term bound at the box centre and corners
        pts = np.stack(np.meshgrid(*[(a, b) for a, b in zip(lo, hi)], indexing="ij"), -1).reshape(-1, model.d)
        cov = model.covariance(0.0, np.vstack([pts, x0]))
        h = np.asarray(grid.spacings)
        worst = max(float(np.max(np.abs(cov[:, i, j]))) / (h[i] * h[j])
                    for i in range(model.d) for j in range(i + 1, model.d))
        steps = max(steps, int(math.ceil(1.05 * worst * tau / grid.cross_cfl)))
        grid = GridSpec(grid.lower, grid.upper, grid.nodes, steps)
    return grid


def _ghost(bc: str, h: float, upper: bool) -> tuple[float, float]:
    """Coefficients (c0, c1) with ghost = c0 * v_edge + c1 * v_neighbour."""
    if bc == LINEAR:
        return 2.0, -1.0
    if bc == EXP_LINEAR:
        if upper:
            return 2.0 / (1.0 - 0.5 * h), -(1.0 + 0.5 * h) / (1.0 - 0.5 * h)
        return 2.0 / (1.0 + 0.5 * h), (0.5 * h - 1.0) / (1.0 + 0.5 * h)
    raise ConfigError(f"unknown boundary condition {bc!r}")


def derivative_matrices(n: int, h: float, bc: str) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """First and second central-difference matrices with ghost-node edges."""
    d1 = sp.lil_matrix((n, n))
    d2 = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        d1[i, i - 1], d1[i, i + 1] = -0.5 / h, 0.5 / h
        d2[i, i - 1], d2[i, i], d2[i, i + 1] = 1 / h**2, -2 / h**2, 1 / h**2
    c0, c1 = _ghost(bc, h, upper=False)
    # ghost below node 0: g = c0 v0 + c1 v1
    d1[0, 0], d1[0, 1] = -c0 * 0.5 / h, (1.0 - c1) * 0.5 / h
    d2[0, 0], d2[0, 1] = (c0 - 2.0) / h**2, (c1 + 1.0) / h**2
    c0, c1 = _ghost(bc, h, upper=True)
    # ghost above node n-1: g = c0 v_{n-1} + c1 v_{n-2}
    d1[n - 1, n - 1], d1[n - 1, n - 2] = c0 * 0.5 / h, (c1 - 1.0) * 0.5 / h
    d2[n - 1, n - 1], d2[n - 1, n - 2] = (c0 - 2.0) / h**2, (c1 + 1.0) / h**2
    return d1.tocsr(), d2.tocsr()


def _lift(mat: sp.spmatrix, axis: int, nodes: tuple[int, ...]) -> sp.csr_matrix:
    out = None
    for j, n in enumerate(nodes):
        f = mat if j == axis else sp.identity(n, format="csr")
        out = f if out is None else sp.kron(out, f, format="csr")
    return out


@dataclass
class DiscretizedGenerator:
    """Stencils of the generator on a tensor grid at one time.

    ``main`` holds drift, diagonal diffusion and the ``-r`` term; ``cross``
    holds the mixed-derivative part.  ``first[j]``, ``second[j]`` are the
    lifted difference matrices, ``drift`` and ``cov`` the nodal coefficients.
    """

    t: float
    nodes: tuple[int, ...]
    spacings: tuple[float, ...]
    boundary: tuple[str, ...]
    drift: np.ndarray
    cov: np.ndarray
    first: list = field(repr=False)
    second: list = field(repr=False)
    main: sp.csr_matrix = field(repr=False)
    cross: sp.csr_matrix = field(repr=False)

    @classmethod
    def assemble(cls, model: FactorModel, grid: GridSpec, boundary: tuple[str, ...], t: float):
        axes = grid.axes
        nodes, hs = grid.nodes, grid.spacings
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, model.d)
        drift = np.asarray(model.drift(t, mesh), dtype=float)
        cov = model.covariance(t, mesh)
        if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(cov))):
            raise NumericalError("model coefficients are not finite on the PDE grid")
        first, second = [], []
        for j in range(model.d):
            d1, d2 = derivative_matrices(nodes[j], hs[j], boundary[j])
            first.append(_lift(d1, j, nodes))
            second.append(_lift(d2, j, nodes))
        size = mesh.shape[0]
        main = -model.rate * sp.identity(size, format="csr")
        for j in range(model.d):
            main = main + sp.diags(drift[:, j]) @ first[j] + sp.diags(0.5 * cov[:, j, j]) @ second[j]
        cross = sp.csr_matrix((size, size))
        for i in range(model.d):
            for j in range(i + 1, model.d):
                cross = cross + sp.diags(cov[:, i, j]) @ (first[i] @ first[j])
        return cls(t, tuple(nodes), tuple(hs), tuple(boundary), drift, cov, first, second,
                   main.tocsr(), cross.tocsr())

    def cross_number(self, dt: float) -> float:
        d = len(self.nodes)
        worst = 0.0
        for i in range(d):
            for j in range(i + 1, d):
                worst = max(worst, dt * float(np.max(np.abs(self.cov[:, i, j]))) / (self.spacings[i] * self.spacings[j]))
        return worst

    @property
    def operator(self) -> sp.csr_matrix:
        return (self.main + self.cross).tocsr()


def boundary_for(model: FactorModel, asset: Asset) -> tuple[str, ...]:
    bc = [LINEAR] * model.d
    if asset.on_stock and model.price_index is not None:
        bc[model.price_index] = EXP_LINEAR
    return tuple(bc)


def _fourth_order_gradient(values: np.ndarray, spacings) -> np.ndarray:
    """Gradient field: 4th-order central differences, 2nd-order near edges."""
    out = np.empty(values.shape + (values.ndim,))
    for j, h in enumerate(spacings):
        g = np.gradient(values, h, axis=j, edge_order=2)
        v = np.moveaxis(values, j, 0)
        gj = np.moveaxis(g, j, 0)
        if v.shape[0] >= 5:
            gj[2:-2] = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
        out[..., j] = np.moveaxis(gj, 0, j)
    return out


class PricingSurface:
    """Solved price function on ``times x grid``, usable as a pricer.

    Values between grid nodes use cubic splines in space and linear
    interpolation in time.
    """

    backend = "pde"
    _CACHE = 64

    def __init__(self, model: FactorModel, asset: Asset, grid: GridSpec, times: np.ndarray,
                 values: np.ndarray, metadata: dict):
        self.model = model
        self.asset = asset
        self.grid = grid
        self.times = times
        self.values = values
        self.metadata = metadata
        self._axes = grid.axes
        self._spacings = np.asarray(grid.spacings)
        self._lower = np.asarray(grid.lower)
        self._cache: OrderedDict = OrderedDict()

    @property
    def asset_id(self) -> str:
        return self.asset.label

    def _cached(self, key, build):
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        val = build()
        self._cache[key] = val
        if len(self._cache) > self._CACHE:
            self._cache.popitem(last=False)
        return val

    def _value_coeffs(self, k: int) -> np.ndarray:
        return self._cached(("v", k), lambda: spline_filter(self.values[k], order=3, mode="nearest"))

    def _grad_coeffs(self, k: int) -> list[np.ndarray]:
        def build():
            g = _fourth_order_gradient(self.values[k], self.grid.spacings)
            return [spline_filter(g[..., j], order=3, mode="nearest") for j in range(self.model.d)]
        return self._cached(("g", k), build)

    def _bracket(self, t: np.ndarray):
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise DomainError(f"time outside surface range [0, {self.times[-1]}]")
        dt = self.times[1] - self.times[0]
        pos = np.clip((t - self.times[0]) / dt, 0.0, len(self.times) - 1)
        k = np.minimum(np.floor(pos).astype(int), len(self.times) - 2)
        return k, pos - k

    def _check(self, x: np.ndarray, margin: int):
        lo = self._lower + margin * self._spacings
        hi = np.asarray(self.grid.upper) - margin * self._spacings
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise DomainError(f"point lies within {margin} grid spacings of the PDE box edge")

    def _interp(self, t, x, coeff_fn, check_margin, vector):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        xf = x.reshape(-1, self.model.d)
        tf = np.broadcast_to(np.asarray(t, dtype=float), shape).reshape(-1)
        if check_margin is not None:
            self._check(xf, check_margin)
        idx = ((xf - self._lower) / self._spacings).T
        k, w = self._bracket(tf)
        width = self.model.d if vector else 1
        out = np.zeros((len(tf), width))
        for kk in np.unique(k):
            sel = k == kk
            for side, weight in ((kk, 1.0 - w[sel]), (kk + 1, w[sel])):
                if not np.any(weight):
                    continue
                coeffs = coeff_fn(side)
                parts = coeffs if vector else [coeffs]
                for j, c in enumerate(parts):
                    out[sel, j] += weight * map_coordinates(c, idx[:, sel], order=3, mode="nearest",
                                                            prefilter=False)
        if vector:
            return out.reshape(shape + (width,))
        return out[:, 0].reshape(shape)

    def price(self, t, x, check: bool = False):
        return self._interp(t, x, self._value_coeffs, 0 if check else None, vector=False)

    def gradient(self, t, x, check: bool = True):
        """4th-order finite-difference gradient, spline-interpolated to ``x``."""
        return self._interp(t, x, self._grad_coeffs, 2 if check else None, vector=True)

    def mesh(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self._axes, indexing="ij"), axis=-1)

    def write_csv(self, fh, time_stride: int = 1) -> None:
        d = self.model.d
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{j + 1}" for j in range(d)] + ["value"])
        pts = self.mesh().reshape(-1, d)
        for k in range(0, len(self.times), time_stride):
            vals = self.values[k].reshape(-1)
            for p, v in zip(pts, vals):
                w.writerow([repr(float(self.times[k]))] + [repr(float(c)) for c in p] + [repr(float(v))])


def solve_pde(model: FactorModel, asset: Asset, grid: GridSpec) -> PricingSurface:
    """Solve backward from ``v(T_i, .) = h`` to ``t = 0`` on ``grid``.

    The first ``grid.rannacher_steps`` half steps are fully implicit; the
    rest are Crank-Nicolson.  Raises :class:`NumericalError` when the
    explicit mixed-derivative terms exceed ``grid.cross_cfl``.
    """
    if len(grid.nodes) != model.d:
        raise ConfigError(f"grid has {len(grid.nodes)} axes, model has {model.d} factors")
    T = asset.maturity
    if not T > 0:
        raise ConfigError("PDE solve needs a positive maturity")
    n = grid.n_time_steps
    dt = T / n
    times = np.linspace(0.0, T, n + 1)
    bc = boundary_for(model, asset)
    mesh = np.stack(np.meshgrid(*grid.axes, indexing="ij"), axis=-1).reshape(-1, model.d)
    size = mesh.shape[0]
    eye = sp.identity(size, format="csc")

    terminal = np.asarray(asset.evaluate(mesh, model.price_index), dtype=float)
    if not np.all(np.isfinite(terminal)):
        raise NumericalError(f"payoff of {asset.label} is not finite on the grid")
    values = np.empty((n + 1, size))
    values[n] = terminal

    factor_cache: dict = {}

    def stepper(t_mid: float, kind: str, h: float):
        key = (kind, h) if model.time_homogeneous else (kind, h, t_mid)
        if key in factor_cache:
            return factor_cache[key]
        gen = DiscretizedGenerator.assemble(model, grid, bc, t_mid)
        cfl = gen.cross_number(h)
        if cfl > grid.cross_cfl:
            raise NumericalError(
                f"explicit mixed-derivative number {cfl:.3g} exceeds {grid.cross_cfl}; "
                f"use at least {int(math.ceil(n * cfl / grid.cross_cfl))} time steps or a coarser grid")
        if kind == "implicit":
            lu = splu((eye - h * gen.main).tocsc())
            rhs = (eye + h * gen.cross).tocsr()
        else:
            lu = splu((eye - 0.5 * h * gen.main).tocsc())
            rhs = (eye + 0.5 * h * gen.main + h * gen.cross).tocsr()
        if not model.time_homogeneous:
            factor_cache.clear()
        factor_cache[key] = (lu, rhs)
        return lu, rhs

    v = terminal
    t = T
    n_startup = grid.rannacher_steps // 2
    for k in range(n - 1, -1, -1):
        if n - 1 - k < n_startup:
            for half in range(2):
                lu, rhs = stepper(t - 0.25 * dt - 0.5 * half * dt, "implicit", 0.5 * dt)
                v = lu.solve(rhs @ v)
        else:
            lu, rhs = stepper(t - 0.5 * dt, "cn", dt)
            v = lu.solve(rhs @ v)
        t = times[k]
        values[k] = v
    if not np.all(np.isfinite(values)):
        raise NumericalError("PDE solution diverged")

    metadata = {
        "backend": "pde",
        "scheme": "crank_nicolson_rannacher",
        "rannacher_half_steps": grid.rannacher_steps,
        "boundary": list(bc),
        "spacings": list(grid.spacings),
        "n_time_steps": n,
    }
    return PricingSurface(model, asset, grid, times, values.reshape((n + 1,) + tuple(grid.nodes)), metadata)

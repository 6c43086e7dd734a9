"""Jacobian of the pricing functions, completeness verdicts and witnesses.

Row ``i`` of ``G(t, x)`` is the spatial gradient of the price of traded
asset ``i``.  The market is complete exactly when the factor paths spend
zero time where ``G`` is singular; for real-analytic prices one
non-singular point settles it.  Singularity is judged on the scale-free
ratio ``s_min / s_max`` of singular values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from complab.errors import ConfigError, NumericalError
from complab.factor_models import FactorModel
from complab.paths import PathSet

DEFAULT_TOLERANCE = 1e-8

COMPLETE = "COMPLETE"
LIKELY_INCOMPLETE = "LIKELY_INCOMPLETE"
INCONCLUSIVE = "INCONCLUSIVE"


def _with_asset_index(i: int, pricer, exc: Exception) -> Exception:
    label = getattr(getattr(pricer, "asset", None), "label", "?")
    return type(exc)(f"asset {i} ({label}): {exc}")


def jacobian(pricers: Sequence, t, x, check: bool = False) -> np.ndarray:
    """Stack gradients into ``G`` of shape ``(..., d, d)``."""
    x = np.asarray(x, dtype=float)
    rows = []
    for i, p in enumerate(pricers):
        try:
            if getattr(p, "backend", "") == "pde":
                g = p.gradient(t, x, check=check)
            else:
                g = p.gradient(t, x)
        except (ValueError, RuntimeError) as exc:
            raise _with_asset_index(i, p, exc) from exc
        rows.append(np.asarray(g, dtype=float))
    return np.stack(rows, axis=-2)


def singularity_ratio(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Singular values (descending) and ``s_min / s_max`` (0 for the zero matrix)."""
    sv = np.linalg.svd(G, compute_uv=False)
    top = sv[..., 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(top > 0, sv[..., -1] / top, 0.0)
    return sv, ratio


@dataclass
class JacobianEvaluation:
    t: float
    x: np.ndarray
    G: np.ndarray
    det: float
    singular_values: np.ndarray
    singularity_ratio: float
    is_singular: bool
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def rank(self) -> int:
        return numerical_rank(self.G, self.tolerance)


def numerical_rank(G: np.ndarray, tolerance: float = DEFAULT_TOLERANCE) -> int:
    sv = np.linalg.svd(np.asarray(G, dtype=float), compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > tolerance * sv[0]))


def build_G(pricers: Sequence, t: float, x, tolerance: float = DEFAULT_TOLERANCE) -> JacobianEvaluation:
    x = np.asarray(x, dtype=float)
    if len(pricers) != x.shape[-1]:
        raise ConfigError(f"need exactly d={x.shape[-1]} assets, got {len(pricers)}")
    G = jacobian(pricers, t, x, check=True)
    sv, ratio = singularity_ratio(G)
    return JacobianEvaluation(float(t), x, G, float(np.linalg.det(G)), sv, float(ratio),
                              bool(ratio < tolerance), tolerance)


@dataclass
class CompletenessVerdict:
    verdict: str
    method: str
    tolerance: float
    evidence: dict = field(default_factory=dict)
    occupation: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {"verdict": self.verdict, "method": self.method}
        out.update(self.evidence)
        out["tolerance"] = self.tolerance
        return out


def single_point_test(model: FactorModel, pricers: Sequence, probe_points, analyticity_assumed: bool = True,
                      tolerance: float = DEFAULT_TOLERANCE) -> CompletenessVerdict:
    """Non-singularity of ``G`` at one probe implies completeness, provided
    the prices are real analytic.  Analyticity is the caller's assumption."""
    probe_points = list(probe_points)
    if not probe_points:
        raise ConfigError("single_point_test needs at least one probe point")
    ratios = []
    found = None
    for t, x in probe_points:
        ev = build_G(pricers, t, x, tolerance)
        ratios.append(ev.singularity_ratio)
        if not ev.is_singular:
            found = ev
            break
    if found is not None:
        verdict = COMPLETE
        evidence = {"point": {"t": found.t, "x": found.x.tolist()}, "singularity_ratio": found.singularity_ratio}
    else:
        verdict = LIKELY_INCOMPLETE
        evidence = {"n_probes": len(probe_points), "max_singularity_ratio": max(ratios)}
    if not analyticity_assumed:
        evidence["explanation"] = (
            f"probes suggest {verdict}, but a point test is only decisive for real-analytic prices")
        verdict = INCONCLUSIVE
    return CompletenessVerdict(verdict, "single_point_analytic", tolerance, evidence)


def path_jacobians(model: FactorModel, pricers: Sequence, paths: PathSet):
    """``G`` at the left end of every step: times ``(K,)``, states and ``G``."""
    _check_paths(model, pricers, paths)
    t = paths.times[:-1]
    xs = paths.states[:, :-1]
    tt = np.broadcast_to(t, xs.shape[:-1])
    return tt, xs, jacobian(pricers, tt, xs)


def _check_paths(model, pricers, paths):
    if paths.model is not model and (paths.model.family != model.family or paths.model.d != model.d
                                     or paths.model.x0 != model.x0):
        raise ConfigError("PathSet was simulated from a different model")
    if len(pricers) != model.d:
        raise ConfigError(f"need exactly d={model.d} assets, got {len(pricers)}")


def completeness_along_paths(model: FactorModel, pricers: Sequence, paths: PathSet,
                             tolerance: float = DEFAULT_TOLERANCE, probe_points=None,
                             analyticity_assumed: bool = True) -> CompletenessVerdict:
    """Occupation time of the singular set along simulated paths.

    COMPLETE needs zero occupation on every path and a passing single-point
    test (at ``(T/2, x0)`` unless ``probe_points`` is given);
    LIKELY_INCOMPLETE needs mean occupation fraction above one half.
    """
    _, _, G = path_jacobians(model, pricers, paths)
    _, ratio = singularity_ratio(G)
    singular = ratio < tolerance
    fraction = singular.mean(axis=1)
    probe_points = probe_points or [(0.5 * model.horizon, model.x0_array)]
    point = single_point_test(model, pricers, probe_points, analyticity_assumed, tolerance)
    hist, edges = np.histogram(fraction, bins=10, range=(0.0, 1.0))
    evidence = {
        "n_paths": int(paths.n_paths),
        "n_points": int(singular.size),
        "singular_point_share": float(singular.mean()),
        "mean_occupation_fraction": float(fraction.mean()),
        "max_occupation_fraction": float(fraction.max()),
        "histogram": {"edges": edges.tolist(), "counts": hist.tolist()},
        "single_point": point.to_dict(),
    }
    if fraction.max() == 0 and point.verdict == COMPLETE:
        verdict = COMPLETE
    elif fraction.mean() > 0.5:
        verdict = LIKELY_INCOMPLETE
    else:
        verdict = INCONCLUSIVE
    return CompletenessVerdict(verdict, "pathwise_occupation", tolerance, evidence, occupation=fraction)


@dataclass
class WitnessClaim:
    """Claim ``H = sum_k beta_k sigma_k dW_k`` supported on the singular set.

    ``beta`` spans the kernel of ``Gamma = G sigma sigma^T`` and is scaled so
    that ``|beta sigma| = 1``.  Anchors keep the first singular evaluation
    points for inspection; residual statistics cover all of them.
    """

    anchor_times: np.ndarray
    anchor_states: np.ndarray
    anchor_beta: np.ndarray
    anchor_gamma: np.ndarray
    n_singular: int
    kernel_residual_max: float
    normalization_error_max: float
    H: np.ndarray
    occupation_time: np.ndarray
    h_second_moment: float
    h_second_moment_stderr: float
    occupation_mean: float
    occupation_stderr: float
    orthogonality: np.ndarray
    orthogonality_stderr: np.ndarray

    def summary(self) -> dict:
        return {
            "n_singular_points": self.n_singular,
            "kernel_residual_max": self.kernel_residual_max,
            "normalization_error_max": self.normalization_error_max,
            "h_second_moment": self.h_second_moment,
            "h_second_moment_stderr": self.h_second_moment_stderr,
            "mean_occupation_time": self.occupation_mean,
            "mean_occupation_time_stderr": self.occupation_stderr,
            "orthogonality": self.orthogonality.tolist(),
            "orthogonality_stderr": self.orthogonality_stderr.tolist(),
        }


def kernel_vectors(gamma: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Unit-|beta sigma| kernel direction of each ``gamma`` in a stack.

    The right singular vector of the smallest singular value is taken and
    its sign fixed so the first non-negligible component is positive.
    """
    _, _, vh = np.linalg.svd(gamma)
    beta = vh[..., -1, :]
    mag = np.abs(beta)
    first = np.argmax(mag > 1e-12 * mag.max(axis=-1, keepdims=True), axis=-1)
    sign = np.sign(np.take_along_axis(beta, first[..., None], axis=-1))
    beta = beta * np.where(sign == 0, 1.0, sign)
    row = np.einsum("...i,...ij->...j", beta, sigma)
    return beta / np.linalg.norm(row, axis=-1, keepdims=True)


def incompleteness_witness(model: FactorModel, pricers: Sequence, paths: PathSet,
                           tolerance: float = DEFAULT_TOLERANCE, max_anchors: int = 1000) -> WitnessClaim:
    """Build the orthogonal claim and its Monte Carlo diagnostics.

    ``E[H^2]`` should match the mean time spent in the singular set and
    ``E[H * gain_i]`` should vanish for every traded asset, where ``gain_i``
    is the discounted gain from holding one unit of asset ``i``.
    """
    tt, xs, G = path_jacobians(model, pricers, paths)
    _, ratio = singularity_ratio(G)
    singular = ratio < tolerance
    if not np.any(singular):
        raise NumericalError("market appears complete; no witness exists")
    sigma = np.asarray(model.diffusion(tt, xs), dtype=float)
    dW = paths.dW

    gamma_s = G[singular] @ (sigma[singular] @ np.swapaxes(sigma[singular], -1, -2))
    sig_s = sigma[singular]
    beta_s = kernel_vectors(gamma_s, sig_s)
    resid = np.linalg.norm(np.einsum("...ij,...j->...i", gamma_s, beta_s), axis=-1)
    gnorm = np.linalg.norm(gamma_s, ord=2, axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(gnorm > 0, resid / gnorm, 0.0)
    row = np.einsum("...i,...ij->...j", beta_s, sig_s)
    norm_err = np.abs(np.sum(row * row, axis=-1) - 1.0)

    integrand = np.zeros(dW.shape)
    integrand[singular] = row
    H = np.sum(integrand * dW, axis=(1, 2))

    disc = np.exp(-model.rate * paths.times[:-1])[None, :, None]
    gain_rows = np.einsum("nkij,nkjl->nkil", G, sigma)
    gains = np.sum(disc[..., None] * gain_rows * dW[:, :, None, :], axis=(1, 3))

    n = paths.n_paths
    occ = paths.dt * singular.sum(axis=1)
    h2 = H * H
    prod = H[:, None] * gains
    idx = np.argwhere(singular)[:max_anchors]
    sel = tuple(idx.T)
    return WitnessClaim(
        anchor_times=tt[sel],
        anchor_states=xs[sel],
        anchor_beta=beta_s[:len(idx)],
        anchor_gamma=gamma_s[:len(idx)],
        n_singular=int(singular.sum()),
        kernel_residual_max=float(rel.max()),
        normalization_error_max=float(norm_err.max()),
        H=H,
        occupation_time=occ,
        h_second_moment=float(h2.mean()),
        h_second_moment_stderr=float(h2.std(ddof=1) / math.sqrt(n)),
        occupation_mean=float(occ.mean()),
        occupation_stderr=float(occ.std(ddof=1) / math.sqrt(n)),
        orthogonality=prod.mean(axis=0),
        orthogonality_stderr=prod.std(axis=0, ddof=1) / math.sqrt(n),
    )

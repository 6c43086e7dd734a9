import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from complab import (
    build_G,
    completeness_along_paths,
    incompleteness_witness,
    make_builtin_model,
    simulate_paths,
    single_point_test,
)
from complab.completeness import (
    COMPLETE,
    INCONCLUSIVE,
    LIKELY_INCOMPLETE,
    kernel_vectors,
    numerical_rank,
    singularity_ratio,
)
from complab.errors import ConfigError, NumericalError
from complab.pricing import Asset, ClosedFormPricer, stock


def squares(model):
    return [ClosedFormPricer(model, Asset("european_factor", "square", model.horizon, coordinate=j))
            for j in range(model.d)]


def calls_on_first(model, strikes):
    return [ClosedFormPricer(model, Asset("european_factor", "call", model.horizon, strike=k, coordinate=0))
            for k in strikes]


def test_heat_G_is_diagonal(heat_model):
    ev = build_G(squares(heat_model), 0.0, [1.0, 2.0])
    np.testing.assert_array_equal(ev.G, np.diag([2.0, 4.0]))
    assert ev.det == pytest.approx(8.0, rel=1e-14)
    assert not ev.is_singular and ev.rank == 2


def test_two_calls_G_is_singular_everywhere():
    m = make_builtin_model("correlated_bm", {"sigma": np.eye(2).tolist(), "x0": [100.0, 0.0]})
    pricers = calls_on_first(m, (90.0, 110.0))
    rng = np.random.default_rng(0)
    for t, x in zip(rng.uniform(0, 0.9, 50), rng.normal(100.0, 5.0, (50, 2))):
        ev = build_G(pricers, t, x)
        assert ev.is_singular and abs(ev.det) < 1e-12


def test_one_factor_stock_is_never_singular(gbm_model):
    ev = build_G([ClosedFormPricer(gbm_model, stock(1.0))], 0.2, [math.log(50.0)])
    assert ev.G[0, 0] == pytest.approx(50.0) and not ev.is_singular


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=9, max_size=9))
def test_svd_determinant_consistency(entries):
    G = np.array(entries).reshape(3, 3)
    s, ratio = singularity_ratio(G)
    det = np.linalg.det(G)
    assert abs(abs(det) - np.prod(s)) <= 1e-8 * max(np.prod(s), 1e-300) + 1e-12 * s[0] ** 3


def test_rank_drop_when_assets_use_few_factors():
    # three assets on factor 1 only under a 3-factor correlated BM: d - 2 = 1 factor
    m = make_builtin_model("correlated_bm", {"sigma": [[1, 0, 0], [0.3, 1, 0], [0.2, 0.1, 1]]})
    pricers = [ClosedFormPricer(m, Asset("european_factor", p, 1.0, strike=k, coordinate=0))
               for p, k in (("call", 0.0), ("put", 0.3), ("square", None))]
    paths = simulate_paths(m, 50, 20, seed=1)
    verdict = completeness_along_paths(m, pricers, paths)
    assert verdict.evidence["singular_point_share"] == 1.0
    assert verdict.verdict == LIKELY_INCOMPLETE


def test_heat_paths_complete(heat_model):
    paths = simulate_paths(heat_model, 1000, 50, seed=4)
    v = completeness_along_paths(heat_model, squares(heat_model), paths)
    assert v.verdict == COMPLETE
    assert np.all(v.occupation == 0.0)


def test_two_calls_paths_likely_incomplete():
    m = make_builtin_model("correlated_bm", {"sigma": [[1.0, 0.0], [0.5, 0.8]]})
    paths = simulate_paths(m, 500, 40, seed=5)
    v = completeness_along_paths(m, calls_on_first(m, (0.0, 0.5)), paths)
    assert v.verdict == LIKELY_INCOMPLETE
    assert np.all(v.occupation == 1.0)


def test_stock_and_affine_likely_incomplete(sv_model):
    pricers = [ClosedFormPricer(sv_model, stock(1.0)),
               ClosedFormPricer(sv_model, Asset("european_stock", "affine", 1.0, a=5.0, b=2.0))]
    paths = simulate_paths(sv_model, 200, 25, seed=6)
    v = completeness_along_paths(sv_model, pricers, paths)
    assert v.verdict == LIKELY_INCOMPLETE and v.evidence["mean_occupation_fraction"] == 1.0


def test_single_point_and_analyticity_flag(heat_model):
    pricers = squares(heat_model)
    assert single_point_test(heat_model, pricers, [(0.0, [1.0, 2.0])]).verdict == COMPLETE
    v = single_point_test(heat_model, pricers, [(0.0, [1.0, 2.0])], analyticity_assumed=False)
    assert v.verdict == INCONCLUSIVE and "explanation" in v.evidence
    with pytest.raises(ConfigError):
        single_point_test(heat_model, pricers, [])


def test_single_point_finds_later_probe(heat_model):
    # the first probe sits on the singular cross x_1 = 0
    v = single_point_test(heat_model, squares(heat_model), [(0.0, [0.0, 2.0]), (0.0, [1.0, 2.0])])
    assert v.verdict == COMPLETE and v.evidence["point"]["x"] == [1.0, 2.0]


def test_pathwise_mixture_is_inconclusive(heat_model):
    # the first asset's gradient vanishes on x_1 < 0, so each path spends a random share of time in S
    half = Asset("custom", "custom", 1.0, fn=lambda x: x[..., 0])

    class Kinked:
        backend = "closed_form"
        asset = half

        def price(self, t, x):
            return np.maximum(np.asarray(x)[..., 0], 0.0)

        def gradient(self, t, x):
            x = np.asarray(x, dtype=float)
            g = np.zeros(x.shape)
            g[..., 0] = (x[..., 0] > 0).astype(float)
            return g

    m = make_builtin_model("correlated_bm", {"sigma": np.eye(2).tolist(), "x0": [0.0, 1.0]})
    pricers = [Kinked(), ClosedFormPricer(m, Asset("european_factor", "square", 1.0, coordinate=1))]
    paths = simulate_paths(m, 400, 50, seed=2)
    v = completeness_along_paths(m, pricers, paths, probe_points=[(0.5, np.array([1.0, 1.0]))])
    assert v.verdict == INCONCLUSIVE
    assert 0.2 < v.evidence["mean_occupation_fraction"] < 0.8


def test_witness_two_calls_identity():
    m = make_builtin_model("correlated_bm", {"sigma": np.eye(2).tolist()})
    paths = simulate_paths(m, 10_000, 25, seed=7)
    w = incompleteness_witness(m, calls_on_first(m, (0.0, 0.5)), paths)
    np.testing.assert_allclose(np.abs(w.anchor_beta), np.tile([0.0, 1.0], (len(w.anchor_beta), 1)), atol=1e-12)
    assert abs(w.h_second_moment - 1.0) < 3 * w.h_second_moment_stderr
    assert w.occupation_mean == pytest.approx(1.0)
    assert np.all(np.abs(w.orthogonality) < 3 * w.orthogonality_stderr)
    assert w.normalization_error_max < 1e-12


def test_witness_kernel_residual_stock_affine(sv_model):
    pricers = [ClosedFormPricer(sv_model, stock(1.0)),
               ClosedFormPricer(sv_model, Asset("european_stock", "affine", 1.0, a=1.0, b=3.0))]
    paths = simulate_paths(sv_model, 100, 20, seed=8)
    w = incompleteness_witness(sv_model, pricers, paths)
    assert w.kernel_residual_max <= 1e-10
    gamma_beta = np.einsum("nij,nj->ni", w.anchor_gamma, w.anchor_beta)
    assert np.all(np.linalg.norm(gamma_beta, axis=1) <= 1e-10 * np.linalg.norm(w.anchor_gamma, 2, axis=(1, 2)))


def test_witness_refuses_complete_market(heat_model):
    paths = simulate_paths(heat_model, 50, 10, seed=1)
    with pytest.raises(NumericalError, match="no witness exists"):
        incompleteness_witness(heat_model, squares(heat_model), paths)


def test_kernel_vector_sign_convention():
    gamma = np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]])
    sigma = np.broadcast_to(2.0 * np.eye(2), (2, 2, 2))
    beta = kernel_vectors(gamma, sigma)
    np.testing.assert_allclose(beta, [[0.0, 0.5], [0.0, 0.5]], atol=1e-15)


def test_numerical_rank():
    assert numerical_rank(np.diag([1.0, 1e-12])) == 1
    assert numerical_rank(np.eye(3)) == 3


def test_mismatched_asset_count(heat_model):
    paths = simulate_paths(heat_model, 5, 5, seed=1)
    with pytest.raises(ConfigError):
        completeness_along_paths(heat_model, squares(heat_model)[:1], paths)

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inflatereg import estimators as est
from inflatereg.sampling import (DesignSample, NoiseModel, make_beta_custom, make_beta_topk,
                                 replicate_stream, sample_design)
from inflatereg.spectrum import (make_block_spectrum, make_isotropic_spectrum,
                                 make_power_law_spectrum, make_shrink_adversary_spectrum)


def _sample(n=8, d=40, sigma=0.5, seed=0, rid=0, s=None):
    s = s or make_power_law_spectrum(n, d, 0.6)
    beta = make_beta_topk(s, min(n, d))
    return s, beta, sample_design(s, n, NoiseModel.gaussian(sigma), beta,
                                  replicate_stream(seed, rid))


def _manual(x, y) -> DesignSample:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return DesignSample(x, np.ones(x.shape[1]), np.zeros(len(y)), y)


def test_gram_scalar_case() -> None:
    smp = _manual([[1.0, 2.0, 2.0]], [3.0])
    gf = est.gram_factorize(smp)
    assert gf.gram[0, 0] == 9.0
    assert gf.solve(np.array([3.0]))[0] == pytest.approx(1 / 3, rel=1e-15)
    assert gf.min_eig == pytest.approx(9.0)


def test_gram_spd_square_plus_one() -> None:
    rng = np.random.default_rng(0)
    for seed in range(100):
        _, _, smp = _sample(n=6, d=7, seed=seed)
        gf = est.gram_factorize(smp)
        assert not gf.fallback
        b = rng.standard_normal(6)
        assert np.linalg.norm(gf.gram @ gf.solve(b) - b) <= 1e-10 * np.linalg.norm(b)


def test_duplicate_rows_fallback(caplog) -> None:
    x = np.random.default_rng(1).standard_normal((3, 10))
    x = np.vstack([x, x[:1]])
    with caplog.at_level(logging.WARNING, logger="inflatereg"):
        gf = est.gram_factorize(_manual(x, np.ones(4)))
    assert gf.fallback and gf.jitter > 0
    assert "near-singular" in caplog.text
    theta = est.min_norm(_manual(x, np.ones(4)), gf)
    assert theta.provenance.params["fallback"]


def test_gram_rejects_wide() -> None:
    with pytest.raises(ValueError):
        est.gram_factorize(_manual(np.ones((3, 2)), np.ones(3)))


def test_min_norm_examples() -> None:
    smp = _manual([[1.0, 0.0]], [3.0])
    theta = est.min_norm(smp, est.gram_factorize(smp))
    assert theta.coeffs.tolist() == [3.0, 0.0]
    assert theta.provenance.kind == "min_norm"

    s = make_isotropic_spectrum(12)
    beta = make_beta_custom(s, np.random.default_rng(3).standard_normal(12))
    smp = sample_design(s, 12, NoiseModel.none(), beta, replicate_stream(0, 0))
    theta = est.min_norm(smp, est.gram_factorize(smp))
    assert np.allclose(theta.coeffs, beta.coeffs, rtol=0, atol=1e-8)


def test_min_norm_isotropic_projection_mean() -> None:
    n, d, reps = 10, 50, 500
    s = make_isotropic_spectrum(d)
    beta = make_beta_topk(s, 3)
    vals = []
    for r in range(reps):
        smp = sample_design(s, n, NoiseModel.none(), beta, replicate_stream(8, r))
        theta = est.min_norm(smp, est.gram_factorize(smp))
        # noiseless: theta is the projection of beta, so beta' P beta = beta' theta
        vals.append(float(beta.coeffs @ theta.coeffs))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(reps)
    assert abs(vals.mean() - n / d * beta.coeffs @ beta.coeffs) <= 3 * se


def test_inflate_examples() -> None:
    theta = est.EstimateVector(np.array([1.0, -1.0]), est.Provenance("min_norm"))
    assert est.inflate(theta, 2.0).coeffs.tolist() == [2.0, -2.0]
    assert est.inflate(theta, 1.0).coeffs.tolist() == [1.0, -1.0]
    assert not est.inflate(theta, 0.0).coeffs.any()
    assert est.inflate(theta, 2.0).provenance.base.kind == "min_norm"


def test_ridge_examples() -> None:
    _, _, smp = _sample()
    gf = est.gram_factorize(smp)
    mn = est.min_norm(smp, gf).coeffs
    r0 = est.ridge(smp, gf, 0.0).coeffs
    assert np.linalg.norm(r0 - mn) <= 1e-8 * np.linalg.norm(mn)
    big = est.ridge(smp, gf, 1e12 * np.trace(gf.gram)).coeffs
    assert np.linalg.norm(big) <= 1e-6
    lam = 0.3 * gf.min_eig
    theta = est.ridge(smp, gf, lam).coeffs
    expect = gf.gram @ np.linalg.solve(gf.gram + lam * np.eye(gf.n), smp.y)
    assert np.allclose(smp.x @ theta, expect, rtol=1e-8, atol=1e-10)
    neg = est.ridge(smp, gf, -0.9 * gf.min_eig).coeffs
    assert np.linalg.norm(neg) > np.linalg.norm(mn)


def test_ridge_margin_rejection() -> None:
    _, _, smp = _sample()
    gf = est.gram_factorize(smp)
    with pytest.raises(ValueError, match="min_eig"):
        est.ridge(smp, gf, -0.95 * gf.min_eig)
    est.ridge(smp, gf, -0.95 * gf.min_eig, margin=0.01)


def test_ridge_continuity() -> None:
    _, _, smp = _sample(seed=4)
    gf = est.gram_factorize(smp)
    mn = est.min_norm(smp, gf).coeffs
    scale = np.trace(gf.gram) / gf.n
    gaps = [np.linalg.norm(est.ridge(smp, gf, f * scale).coeffs - mn)
            for f in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 1e-4 * np.linalg.norm(mn)


def test_split_sizes() -> None:
    assert est.split_sizes(9, 3) == [3, 3, 3]
    assert est.split_sizes(10, 3) == [3, 3, 4]
    assert est.default_splits(400) == 20
    assert est.default_splits(2) == 2
    with pytest.raises(ValueError, match="block size 0"):
        est.split_sizes(2, 3)
    with pytest.raises(ValueError):
        est.split_sizes(5, 1)


def test_data_split_sums_blocks() -> None:
    _, _, smp = _sample(n=9, d=30)
    ds = est.data_split(smp, 3)
    assert ds.block_sizes == (3, 3, 3)
    manual = sum(est.min_norm(b, est.gram_factorize(b)).coeffs
                 for b in (smp.rows(0, 3), smp.rows(3, 6)))
    assert np.allclose(ds.theta.coeffs, manual, rtol=1e-12, atol=1e-14)
    assert np.array_equal(ds.holdout.y, smp.y[6:])


def test_data_split_duplicated_halves() -> None:
    x = np.random.default_rng(2).standard_normal((3, 12))
    y = np.random.default_rng(3).standard_normal(3)
    smp = _manual(np.vstack([x, x]), np.concatenate([y, y]))
    ds = est.data_split(smp, 2)
    half = _manual(x, y)
    assert np.allclose(ds.theta.coeffs, est.min_norm(half, est.gram_factorize(half)).coeffs,
                       rtol=1e-12, atol=1e-14)


def test_data_split_block_too_large() -> None:
    _, _, smp = _sample(n=8, d=40)
    with pytest.raises(ValueError):
        est.data_split(_manual(smp.x[:, :3], smp.y), 2)


def test_data_split_alignment_upper_band() -> None:
    n, d, q, reps = 100, 10_000, 0.1, 40
    s = make_block_spectrum(n, d, q)
    beta = make_beta_topk(s, n)
    n_splits = est.default_splits(n)
    vals = []
    for r in range(reps):
        smp = sample_design(s, n, NoiseModel.none(), beta, replicate_stream(12, r))
        theta = est.data_split(smp, n_splits).theta.coeffs
        vals.append(float(np.dot(theta, s.eigenvalues * beta.coeffs)))
    lead = n / d * float(np.dot(s.eigenvalues**2, beta.coeffs**2))
    vals = np.array(vals)
    # sum over N-1 blocks of size n/N each carries (N-1)/N of the leading term
    assert vals.mean() <= lead * (1 + 4.0 / n_splits)
    assert vals.mean() >= 0.5 * lead


def test_c_star_examples() -> None:
    s = make_block_spectrum(5, 60, 0.2)
    beta = make_beta_topk(s, 5)
    hold = sample_design(s, 30, NoiseModel.none(), beta, replicate_stream(0, 0))
    theta = est.EstimateVector(beta.coeffs, est.Provenance("data_split"))
    assert est.estimate_c_star(theta, hold) == pytest.approx(1.0, rel=1e-14)
    assert est.estimate_c_star(est.inflate(theta, 2.0), hold) == pytest.approx(0.5, rel=1e-14)
    assert est.estimate_c_star(theta, (hold.x, hold.y)) == pytest.approx(1.0, rel=1e-14)
    zero = est.EstimateVector(np.zeros(60), est.Provenance("data_split"))
    with pytest.raises(ZeroDivisionError):
        est.estimate_c_star(zero, hold)


def test_unbiased_attempt_scales() -> None:
    iso = make_isotropic_spectrum(40)
    theta = est.EstimateVector(np.ones(40), est.Provenance("min_norm"))
    assert est.unbiased_attempt(theta, iso, 8).coeffs == pytest.approx(5.0)
    s = make_block_spectrum(10, 1000, 0.1)
    out = est.unbiased_attempt(est.EstimateVector(np.ones(1000), est.Provenance("min_norm")), s, 10)
    assert out.coeffs[:10] == pytest.approx(10.0, rel=1e-12)


def test_shrink_toward() -> None:
    theta = est.EstimateVector(np.array([1.0, 2.0, 3.0]), est.Provenance("min_norm"))
    v = np.array([0.0, 1.0, 0.0])
    assert est.shrink_toward(theta, v, 0.0).coeffs.tolist() == [1.0, 2.0, 3.0]
    assert est.shrink_toward(theta, v, 1.0).coeffs.tolist() == v.tolist()
    with pytest.raises(ValueError, match="unit norm"):
        est.shrink_toward(theta, 2 * v, 0.5)


def test_shrink_adversary_risk_floor() -> None:
    n, q, c, reps = 20, 0.1, 0.5, 30
    d = n * 200
    s = make_shrink_adversary_spectrum(n, d, q)
    raw = np.zeros(d)
    raw[0] = -1.0
    beta = make_beta_custom(s, raw)
    v = np.zeros(d)
    v[0] = 1.0
    risks = []
    for r in range(reps):
        smp = sample_design(s, n, NoiseModel.none(), beta, replicate_stream(1, r))
        out = est.shrink_toward(est.min_norm(smp, est.gram_factorize(smp)), v, c)
        diff = out.coeffs - beta.coeffs
        risks.append(float(np.dot(s.eigenvalues, diff * diff)))
    assert np.mean(risks) >= c**2 / 2 * q * d / n


def test_projector_helpers() -> None:
    _, _, smp = _sample(n=10, d=60, seed=5)
    gf = est.gram_factorize(smp)
    assert est.projector_trace(gf) == pytest.approx(10.0, abs=1e-6)
    w = np.random.default_rng(6).standard_normal(60)
    u = np.random.default_rng(7).standard_normal(60)
    pw = est.project(smp, gf, w)
    assert np.allclose(est.project(smp, gf, pw), pw, atol=1e-8)
    assert u @ pw == pytest.approx(w @ est.project(smp, gf, u), abs=1e-8)
    diag = est.projection_diag(smp, gf, [0, 7])
    for j, val in zip((0, 7), diag):
        e = np.zeros(60)
        e[j] = 1.0
        assert val == pytest.approx(est.project(smp, gf, e)[j], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 30))
def test_min_norm_invariants(seed, n, extra) -> None:
    d = n + extra
    s = make_power_law_spectrum(n, d, 0.5)
    beta = make_beta_topk(s, 1)
    smp = sample_design(s, n, NoiseModel.gaussian(1.0), beta, replicate_stream(seed, 0))
    gf = est.gram_factorize(smp)
    theta = est.min_norm(smp, gf).coeffs
    assert np.linalg.norm(smp.x @ theta - smp.y) <= 1e-8 * max(1.0, np.linalg.norm(smp.y))
    assert np.linalg.norm(theta - est.project(smp, gf, theta)) <= 1e-8 * np.linalg.norm(theta)
    w = np.random.default_rng(seed).standard_normal(d)
    other = theta + (w - est.project(smp, gf, w))
    assert np.linalg.norm(theta) <= np.linalg.norm(other) + 1e-12
    y2 = np.random.default_rng(seed + 1).standard_normal(n)
    lhs = est.min_norm(smp, gf, smp.y + y2).coeffs
    rhs = theta + est.min_norm(smp, gf, y2).coeffs
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-10 * max(1.0, np.abs(lhs).max()))

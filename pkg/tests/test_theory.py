import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from inflatereg import theory
from inflatereg.sampling import (NoiseKind, NoiseModel, make_beta_custom, make_beta_topk)
from inflatereg.spectrum import (functionals, make_block_spectrum, make_isotropic_spectrum,
                                 make_power_law_spectrum, make_spiked_spectrum)


def test_block_prediction() -> None:
    n, d, q = 100, 100_000, 0.1
    s = make_block_spectrum(n, d, q)
    pred = theory.c_opt_prediction(s, make_beta_topk(s, n), n, 0.0)
    top, tail = q * d / n, d / (d - n) * (1 - q)
    nr = n * (n * top**2 + (d - n) * tail**2) / d**2
    assert pred.numerator == pytest.approx(0.1, rel=1e-12)
    assert pred.denom_signal == pytest.approx(0.01, rel=1e-12)
    assert pred.denom_noise == pytest.approx(nr, rel=1e-12)
    assert pred.denom_noise == pytest.approx(0.0108, rel=0.01)
    assert pred.c_opt_pred == pytest.approx(0.1 / (0.01 + nr), rel=1e-12)
    assert pred.c_opt_pred == pytest.approx(4.805, abs=1e-3)
    assert pred.q == pred.numerator


def test_isotropic_prediction() -> None:
    n, d = 20, 400
    s = make_isotropic_spectrum(d)
    pred = theory.c_opt_prediction(s, make_beta_topk(s, d), n, 0.0)
    assert pred.c_opt_pred == pytest.approx(1 / (n / d + 1), rel=1e-12)
    assert pred.c_opt_pred < 1


def test_spiked_prediction_above_one() -> None:
    n, d = 100, 2000
    s = make_spiked_spectrum(d, 2.0, n=n)
    pred = theory.c_opt_prediction(s, make_beta_topk(s, 1), n, 0.25)
    assert pred.c_opt_pred > 1


def test_block_inflation_condition() -> None:
    for n, ratio, q in [(20, 100, 0.05), (50, 200, 0.1), (10, 50, 0.2), (40, 400, 0.02)]:
        d = n * ratio
        s = make_block_spectrum(n, d, q)
        for sigma2 in (0.0, 0.5, 3.0):
            pred = theory.c_opt_prediction(s, make_beta_topk(s, n), n, sigma2)
            nr = n * functionals(s, n).r_n
            assert (pred.c_opt_pred > 1) == (q * q + (1 + sigma2) * nr < q)


def test_multiplicative_alpha() -> None:
    assert theory.multiplicative_alpha(1.0, 0.0) == pytest.approx((17 / 18, 1 / 216))
    assert theory.multiplicative_alpha(1.0, 1.0) == pytest.approx((35 / 36, 1 / 432))
    assert theory.multiplicative_alpha(1e12, 0.0)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        theory.multiplicative_alpha(0.0, 0.0)


def test_trace_inverse_isotropic_formula() -> None:
    n, d = 10, 1000
    s = make_isotropic_spectrum(d)
    iv = theory.trace_inverse_bounds(s, n, 1)
    rho = n / d
    assert iv.lower == pytest.approx(n / d * (1 + n / d * (1 - 4 * rho)), rel=1e-12)
    assert iv.upper == pytest.approx(n / d * (1 + n / d / (1 - 2 * rho) ** 2), rel=1e-12)
    assert iv.slack_policy == {"o1": 0.2, "c1": 4.0}


def test_precondition_violations() -> None:
    s = make_block_spectrum(10, 100, 0.6)
    with pytest.raises(ValueError, match="lambda_1"):
        theory.trace_inverse_bounds(s, 10, 1)
    with pytest.raises(ValueError, match="lambda_1"):
        theory.projection_diag_bounds(s, 10, 0)
    iso = make_isotropic_spectrum(100)
    with pytest.raises(ValueError):
        theory.trace_inverse_bounds(iso, 10, 3)
    with pytest.raises(ValueError):
        theory.noise_term_bounds(iso, 10, -1.0)


def test_noise_term_zero_noise() -> None:
    iv = theory.noise_term_bounds(make_isotropic_spectrum(200), 10, 0.0)
    assert (iv.lower, iv.upper) == (0.0, 0.0)


def test_projection_diag_isotropic() -> None:
    n, d = 10, 2000
    s = make_isotropic_spectrum(d)
    for i in (0, d - 1):
        iv = theory.projection_diag_bounds(s, n, i)
        assert iv.contains(n / d)
        assert iv.upper - iv.lower <= 0.5 * n / d


def test_proj_sigma_proj_isotropic_exact() -> None:
    n, d = 10, 2000
    s = make_isotropic_spectrum(d)
    beta = make_beta_topk(s, 5)
    iv = theory.proj_sigma_proj_bounds(s, beta, n)
    assert iv.contains(n / d * float(beta.coeffs @ beta.coeffs))


def _mc_contains(s, beta, n, noise, reps, seed, indices) -> dict:
    pm = theory.projection_moments_mc(s, beta, n, noise, indices, reps, seed, threads=1)
    bounds = {"tr_inv": theory.trace_inverse_bounds(s, n, 1),
              "tr_inv2": theory.trace_inverse_bounds(s, n, 2),
              "proj_sigma_proj": theory.proj_sigma_proj_bounds(s, beta, n)}
    for i in indices:
        bounds[f"proj_diag_{i}"] = theory.projection_diag_bounds(s, n, i)
    if noise.homoscedastic:
        bounds["noise_term"] = theory.noise_term_bounds(s, n, noise.sigma_max2)
    assert pm.max_trace_dev <= 1e-6
    return {k: iv.contains(pm.values[k][0], 3 * pm.values[k][1]) for k, iv in bounds.items()}


def test_block_bounds_contain_mc() -> None:
    n, d = 20, 4000
    s = make_block_spectrum(n, d, 0.1)
    got = _mc_contains(s, make_beta_topk(s, n), n, NoiseModel.gaussian(1.0), 300, 1,
                       [0, d // 2, d - 1])
    assert all(got.values()), got


def test_isotropic_bounds_contain_mc() -> None:
    n, d = 20, 2000
    s = make_isotropic_spectrum(d)
    got = _mc_contains(s, make_beta_topk(s, d), n, NoiseModel.gaussian(1.0), 300, 2, [0])
    assert all(got.values()), got


def test_tail_beta_containment() -> None:
    n, d = 20, 4000
    s = make_block_spectrum(n, d, 0.1)
    raw = np.zeros(d)
    raw[n + 5] = 1.0
    beta = make_beta_custom(s, raw)
    got = _mc_contains(s, beta, n, NoiseModel.none(), 300, 3, [n + 5])
    assert all(got.values()), got
    f = functionals(s, n)
    iv = theory.proj_sigma_proj_bounds(s, beta, n)
    # with beta in the tail, the n r(n) beta' S beta part dominates the interval
    assert iv.contains(n * f.r_n * beta.signal(s))


def test_quadratic_forms_identities() -> None:
    for k in (1, 3, 7):
        eye = np.eye(k)
        assert theory.quadratic_form_moments(eye, eye) == k * k + 2 * k
        assert theory.quadratic_form_moments(eye, np.zeros((k, k))) == 0.0
    rng = np.random.default_rng(0)
    for k in (2, 5, 9):
        b = rng.standard_normal((k, k))
        c = rng.standard_normal((k, k))
        two = theory.quadratic_form_moments(b, c)
        three = theory.quadratic_form_moments(b, c, np.eye(k))
        assert three == pytest.approx((k + 4) * two, rel=1e-12)
    with pytest.raises(ValueError):
        theory.quadratic_form_moments(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        theory.quadratic_form_moments(np.eye(17), np.eye(17))


def test_quadratic_forms_mc() -> None:
    rng = np.random.default_rng(1)
    b = rng.standard_normal((5, 5))
    b = b + b.T
    c = rng.standard_normal((5, 5))
    c = c + c.T
    dm = np.diag(rng.uniform(0.5, 2.0, 5))
    z = rng.standard_normal((200_000, 5))
    qb = np.einsum("ij,jk,ik->i", z, b, z)
    qc = np.einsum("ij,jk,ik->i", z, c, z)
    qd = np.einsum("ij,jk,ik->i", z, dm, z)
    for vals, formula in ((qb * qc, theory.quadratic_form_moments(b, c)),
                          (qb * qc * qd, theory.quadratic_form_moments(b, c, dm))):
        se = vals.std(ddof=1) / math.sqrt(vals.size)
        assert abs(vals.mean() - formula) <= 3 * se


def test_sigma2_functional() -> None:
    s = make_block_spectrum(10, 400, 0.1)
    val, se = theory.sigma2_functional_mc(s, 10, NoiseModel.gaussian(2.0), 20, threads=1)
    assert val == pytest.approx(4.0, rel=1e-12)
    assert theory.sigma2_functional_mc(s, 10, NoiseModel.none(), 5, threads=1) == (0.0, 0.0)
    het = NoiseModel(NoiseKind.HETEROSCEDASTIC, 1.0, 1.2)
    val, se = theory.sigma2_functional_mc(s, 10, het, 50, threads=1)
    assert 0.0 < val <= 1.2**2
    assert math.isfinite(se)


def test_trace_bound_at_boundary() -> None:
    s = make_block_spectrum(10, 100, 0.5)
    assert theory.trace_inverse_bounds(s, 10, 1).upper == math.inf
    assert math.isfinite(theory.trace_inverse_bounds(s, 10, 1).lower)


def test_bound_interval_invariant() -> None:
    with pytest.raises(ValueError):
        theory.BoundInterval(2.0, 1.0, "x")
    iv = theory.BoundInterval(0.0, math.inf, "x")
    assert iv.to_dict()["upper"] == "inf"
    assert iv.contains(1e300)


@settings(max_examples=100, deadline=None)
@given(st.integers(5, 40), st.integers(20, 200), st.floats(0.01, 0.24),
       st.sampled_from(["block", "power_law"]), st.floats(0.0, 3.0))
def test_bounds_ordered(n, ratio, q, kind, sigma2) -> None:
    d = n * ratio
    if kind == "block":
        assume(q * d / n > d / (d - n) * (1 - q))
        s = make_block_spectrum(n, d, q)
    else:
        s = make_power_law_spectrum(n, d, 4 * q)
    beta = make_beta_topk(s, n)
    calls = [lambda: theory.trace_inverse_bounds(s, n, 1),
             lambda: theory.trace_inverse_bounds(s, n, 2),
             lambda: theory.projection_diag_bounds(s, n, 0),
             lambda: theory.projection_diag_bounds(s, n, d - 1),
             lambda: theory.noise_term_bounds(s, n, sigma2),
             lambda: theory.proj_sigma_proj_bounds(s, beta, n)]
    for call in calls:
        try:
            iv = call()
        except ValueError as exc:
            assert str(exc).startswith("requires"), exc
            continue
        assert iv.lower <= iv.upper

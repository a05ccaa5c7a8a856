"""Closed-form predictions and two-sided bounds used as analytic oracles.

Asymptotic factors in the bounds are replaced by explicit constants held in
:class:`TheorySlack`: every ``o(1)`` becomes a relative slack ``o1`` and every
``Theta(1)`` factor in a lower bound becomes ``c1``.

Notation: ``L = tr(S)``, ``r = tr(S^2)/L^2``, ``rho = (n/d) lambda_1`` and
``A = X X'``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .estimators import gram_factorize
from .risk import run_replicates
from .sampling import BetaCoefficients, NoiseModel, sample_design
from .spectrum import Spectrum, functionals


@dataclass(frozen=True)
class TheorySlack:
    o1: float = 0.2
    c1: float = 4.0

    def record(self) -> dict[str, float]:
        return {"o1": self.o1, "c1": self.c1}


@dataclass(frozen=True)
class BoundInterval:
    lower: float
    upper: float
    source: str
    slack_policy: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.lower <= self.upper:
            raise ValueError(f"{self.source}: lower {self.lower:g} > upper {self.upper:g}")

    def contains(self, value: float, widen: float = 0.0) -> bool:
        return self.lower - widen <= value <= self.upper + widen

    def to_dict(self) -> dict[str, Any]:
        return {"lower": self.lower, "upper": _finite(self.upper), "source": self.source,
                "slack_policy": dict(self.slack_policy)}


def _finite(v: float) -> float | str:
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


@dataclass(frozen=True)
class TheoryPrediction:
    c_opt_pred: float
    q: float
    numerator: float
    denom_signal: float
    denom_noise: float
    alpha: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"c_opt_pred": self.c_opt_pred, "q": self.q, "numerator": self.numerator,
                "denom_signal": self.denom_signal, "denom_noise": self.denom_noise,
                "alpha": self.alpha}


def _coeffs(beta) -> np.ndarray:
    return np.asarray(getattr(beta, "coeffs", beta), dtype=float)


# ---------------------------------------------------------------------------
# optimal inflation constant
# ---------------------------------------------------------------------------

def multiplicative_alpha(c1: float, c_noise: float) -> tuple[float, float]:
    """``(alpha, q_threshold) = (1 - 1/(18 C), 1/(216 C))`` with ``C = C1 + C_noise``."""
    total = c1 + c_noise
    if total <= 0:
        raise ValueError("C1 + C_noise must be > 0")
    return 1.0 - 1.0 / (18.0 * total), 1.0 / (216.0 * total)


def c_opt_prediction(s: Spectrum, beta, n: int, sigma2: float) -> TheoryPrediction:
    """Leading-order optimal inflation constant from exact eigen-sums."""
    c = _coeffs(beta)
    if c.shape != (s.d,):
        raise ValueError("beta and spectrum dimensions differ")
    lam = s.eigenvalues
    d = s.d
    w = c * c
    numerator = n / d * float(np.dot(lam**2, w))
    denom_signal = (n / d) ** 2 * float(np.dot(lam**3, w))
    denom_noise = (1.0 + sigma2) * n * functionals(s, n).r_n
    denom = denom_signal + denom_noise
    if denom == 0:
        raise ZeroDivisionError("prediction denominator is zero")
    alpha = None
    if numerator > 0:
        alpha = multiplicative_alpha(denom_signal / numerator**2, denom_noise / numerator**2)[0]
    return TheoryPrediction(numerator / denom, numerator, numerator, denom_signal,
                            denom_noise, alpha)


# ---------------------------------------------------------------------------
# bound intervals
# ---------------------------------------------------------------------------

def _projection_preconditions(s: Spectrum, n: int) -> None:
    d = s.d
    if s.top > d / (4.0 * n):
        raise ValueError(f"requires lambda_1 <= d/(4n) = {d / (4.0 * n):g}, got {s.top:g}")
    if not s.trace > n + 1:
        raise ValueError(f"requires tr(S) > n + 1, got {s.trace:g}")
    if not 1 < n < d - 4:
        raise ValueError(f"requires 1 < n < d - 4 (n={n}, d={d})")


def trace_inverse_bounds(s: Spectrum, n: int, k: int,
                         slack: TheorySlack | None = None) -> BoundInterval:
    """Bounds on ``E[tr(A^{-k})]`` for ``k`` in ``{1, 2}``."""
    slack = slack or TheorySlack()
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    d = s.d
    f = functionals(s, n)
    big_l, r, rho = f.trace, f.r_n, f.rho
    if s.top > d / ((k + 1.0) * n):
        raise ValueError(f"requires lambda_1 <= d/({k + 1}n) = {d / ((k + 1.0) * n):g}")
    if not n + 1 < big_l:
        raise ValueError(f"requires n + 1 < tr(S), got {big_l:g}")
    if not k + 2 < n < d - 1:
        raise ValueError(f"requires {k + 2} < n < d - 1 (n={n}, d={d})")
    # at lambda_1 = d/((k+1)n) the gap closes and the upper bound is vacuous
    gap = 1.0 - (k + 1.0) * rho
    if k == 1:
        lower = n / big_l + n**2 * r * (1.0 - slack.c1 * rho) / big_l
        upper = n / big_l + n**2 * r / (big_l * gap**2) if gap > 0 else math.inf
    else:
        lower = n / big_l**2 * (1.0 - slack.o1) + 2.0 * n**2 * r / big_l**2
        upper = (n / big_l**2 * (1.0 + slack.o1)
                 + 2.0 * n**2 * r / (big_l**2 * gap**3)) if gap > 0 else math.inf
    return BoundInterval(lower, upper, f"E[tr(A^-{k})]", slack.record())


def projection_diag_bounds(s: Spectrum, n: int, index: int,
                           slack: TheorySlack | None = None) -> BoundInterval:
    """Bounds on ``E[e_i' P_X e_i] = lambda_i E[a_i' A^{-1} a_i]``."""
    slack = slack or TheorySlack()
    _projection_preconditions(s, n)
    f = functionals(s, n)
    big_l, r, rho = f.trace, f.r_n, f.rho
    lam = float(s.eigenvalues[index])
    nl = n / big_l
    lower = (lam * nl * (1.0 - slack.o1) + lam * n**2 * r / big_l
             - lam**2 * nl**2 - 2.0 * lam**2 * n**3 * r / big_l**2)
    head = 1.0 + n * r * max(0.0, 1.0 - slack.c1 * rho)
    upper = (lam * nl * (1.0 + slack.o1) + lam * n**2 * r / (big_l * (1.0 - 2.0 * rho) ** 2)
             - nl**2 * head**2 * lam**2 / (1.0 + rho))
    return BoundInterval(lower, upper, f"E[P_X]_ii at index {index}", slack.record())


def noise_term_bounds(s: Spectrum, n: int, sigma2: float,
                      slack: TheorySlack | None = None) -> BoundInterval:
    """Bounds on ``E[eps' A^{-1} X S X' A^{-1} eps]`` for homoscedastic noise."""
    slack = slack or TheorySlack()
    _projection_preconditions(s, n)
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    f = functionals(s, n)
    r, rho = f.r_n, f.rho
    lower = sigma2 * r * n * (1.0 + 2.0 * n * r) * (1.0 - 4.0 * rho)
    gap = 1.0 - 4.0 * rho
    if sigma2 == 0:
        upper = 0.0
    elif gap <= 0:
        upper = math.inf
    else:
        upper = sigma2 * r * n * (1.0 + 2.0 * n * r / gap**2) * (1.0 + slack.o1)
    return BoundInterval(lower, upper, "E[noise term]", slack.record())


def proj_sigma_proj_bounds(s: Spectrum, beta, n: int,
                           slack: TheorySlack | None = None) -> BoundInterval:
    """Bounds on ``E[beta' P_X S P_X beta]`` from the diagonal matrix bounds."""
    slack = slack or TheorySlack()
    _projection_preconditions(s, n)
    c = _coeffs(beta)
    if c.shape != (s.d,):
        raise ValueError("beta and spectrum dimensions differ")
    f = functionals(s, n)
    big_l, r, rho = f.trace, f.r_n, f.rho
    lam = s.eigenvalues
    w = c * c
    o = slack.o1
    gap4 = 1.0 - 4.0 * rho
    lower_diag = ((1.0 - o) * n**2 * (1.0 + n * r) ** 2 * lam**3 / big_l**2
                  - 2.0 * n**3 * lam**4 / big_l**3
                  + (1.0 - o) * n * r * (1.0 + 2.0 * n * r) * gap4 * lam)
    if gap4 <= 0:
        upper = math.inf
    else:
        upper_diag = ((1.0 + o) * n**2 * (1.0 + n * r / gap4**3) ** 2 * lam**3 / big_l**2
                      + (1.0 + o) * n * r * (1.0 + n * r / (1.0 - 2.0 * rho) ** 2) * lam)
        upper = float(np.dot(w, upper_diag))
    return BoundInterval(float(np.dot(w, lower_diag)), upper,
                         "E[beta' P_X S P_X beta]", slack.record())


# ---------------------------------------------------------------------------
# Gaussian quadratic forms
# ---------------------------------------------------------------------------

def _sym(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("quadratic-form matrices must be square")
    return 0.5 * (m + m.T)


def quadratic_form_moments(b, c, d=None) -> float:
    """``E[z'Bz z'Cz]`` (or with a third factor ``z'Dz``) for ``z ~ N(0, I)``."""
    b, c = _sym(b), _sym(c)
    mats = [b, c] if d is None else [b, c, _sym(d)]
    k = b.shape[0]
    if any(m.shape != (k, k) for m in mats):
        raise ValueError("dimension mismatch between quadratic-form matrices")
    if k > 16:
        raise ValueError("quadratic-form matrices are limited to dimension 16")
    tb, tc = np.trace(b), np.trace(c)
    if d is None:
        return float(tb * tc + 2.0 * np.trace(b @ c))
    dd = mats[2]
    td = np.trace(dd)
    return float(tb * tc * td
                 + 2.0 * (tb * np.trace(c @ dd) + tc * np.trace(b @ dd) + td * np.trace(b @ c))
                 + 8.0 * np.trace(b @ c @ dd))


# ---------------------------------------------------------------------------
# Monte Carlo functionals
# ---------------------------------------------------------------------------

def _ratio_of_means(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    r = num.size
    ratio = float(num.mean() / den.mean())
    resid = num - ratio * den
    return ratio, float(resid.std(ddof=1) / (math.sqrt(r) * abs(den.mean())))


def sigma2_functional_mc(s: Spectrum, n: int, noise: NoiseModel, replicates: int,
                         seed: int = 0, threads: int | None = None) -> tuple[float, float]:
    """Ratio-of-means estimate of the effective noise level with its se.

    Per draw the numerator is ``tr(S X' A^{-1} Lambda A^{-1} X)`` and the
    denominator ``tr(S X' A^{-2} X)``, where ``Lambda`` holds the conditional
    noise variances.
    """
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    zero = BetaCoefficients(np.zeros(s.d))

    def task(lineage) -> tuple[float, float]:
        sample = sample_design(s, n, noise, zero, lineage)
        gf = gram_factorize(sample)
        h = gf.solve(sample.x)                   # A^{-1} X
        pdiag = np.einsum("ij,ij->i", h * s.eigenvalues, h)
        return float(np.dot(sample.cond_var, pdiag)), float(pdiag.sum())

    batch = run_replicates(task, replicates, seed, "sigma2", threads)
    arr = np.array(batch.results).reshape(-1, 2)
    if not np.any(arr[:, 0]):
        return 0.0, 0.0
    return _ratio_of_means(arr[:, 0], arr[:, 1])


@dataclass(frozen=True)
class ProjectionMoments:
    """MC means and standard errors of the random-projection functionals."""

    values: dict[str, tuple[float, float]]
    indices: tuple[int, ...]
    max_trace_dev: float
    replicates: int

    def to_dict(self) -> dict[str, Any]:
        return {"values": {k: {"mean": m, "se": e} for k, (m, e) in self.values.items()},
                "indices": list(self.indices), "max_trace_dev": self.max_trace_dev,
                "replicates": self.replicates}


def projection_moments_mc(s: Spectrum, beta: BetaCoefficients, n: int, noise: NoiseModel,
                          indices, replicates: int, seed: int = 0,
                          threads: int | None = None) -> ProjectionMoments:
    """MC oracle for ``tr(A^-1)``, ``tr(A^-2)``, projector diagonals,
    the noise quadratic form and ``beta' P_X S P_X beta``."""
    indices = tuple(int(i) for i in indices)
    lam = s.eigenvalues

    def task(lineage) -> np.ndarray:
        sample = sample_design(s, n, noise, beta, lineage)
        gf = gram_factorize(sample)
        inv = gf.inverse()
        x = sample.x
        h = inv @ x                              # A^{-1} X
        diag_all = np.einsum("ij,ij->j", x, h)   # e_j' P_X e_j
        w = inv @ sample.eps
        xw = x.T @ w
        noise_q = float(np.dot(lam * xw, xw))
        pb = x.T @ (h @ beta.coeffs)             # P_X beta
        psp = float(np.dot(lam * pb, pb))
        return np.concatenate([[np.trace(inv), np.sum(inv * inv), noise_q, psp,
                                abs(diag_all.sum() - n)], diag_all[list(indices)]])

    batch = run_replicates(task, replicates, seed, "projection", threads)
    arr = np.array(batch.results)
    r = arr.shape[0]

    def ms(col) -> tuple[float, float]:
        return float(col.mean()), float(col.std(ddof=1) / math.sqrt(r))

    values = {"tr_inv": ms(arr[:, 0]), "tr_inv2": ms(arr[:, 1]),
              "noise_term": ms(arr[:, 2]), "proj_sigma_proj": ms(arr[:, 3])}
    for j, i in enumerate(indices):
        values[f"proj_diag_{i}"] = ms(arr[:, 5 + j])
    return ProjectionMoments(values, indices, float(arr[:, 4].max()), r)

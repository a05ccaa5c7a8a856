"""Exact per-draw risk, Monte Carlo generalization error and risk curves."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np
from scipy import linalg

from . import estimators as est
from .estimators import EstimateVector, GramFactor
from .sampling import BetaCoefficients, DesignSample, NoiseModel, replicate_stream, sample_design
from .spectrum import Spectrum

log = logging.getLogger(__name__)


def excess_risk(theta: EstimateVector | np.ndarray, beta: BetaCoefficients,
                s: Spectrum) -> float:
    """``(theta - beta)' S (theta - beta)``."""
    coeffs = np.asarray(getattr(theta, "coeffs", theta), dtype=float)
    if coeffs.shape != beta.coeffs.shape or coeffs.size != s.d:
        raise ValueError(
            f"dimension mismatch: theta {coeffs.size}, beta {beta.d}, spectrum {s.d}")
    diff = coeffs - beta.coeffs
    return float(np.dot(s.eigenvalues, diff * diff))


def risk_moments(theta: np.ndarray, beta: BetaCoefficients, s: Spectrum) -> tuple[float, float]:
    """``(theta' S beta, theta' S theta)``."""
    lt = s.eigenvalues * theta
    return float(np.dot(lt, beta.coeffs)), float(np.dot(lt, theta))


def mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()) if values.size else math.nan, math.nan
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


# ---------------------------------------------------------------------------
# replicate runner
# ---------------------------------------------------------------------------

class ReplicateFailure(RuntimeError):
    pass


@dataclass
class ReplicateBatch:
    ids: list[int]
    results: list[Any]
    failures: dict[int, str] = field(default_factory=dict)


def resolve_threads(threads: int | None) -> int:
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return threads


def run_replicates(task: Callable[[Any], Any], replicates: int, seed: int,
                   purpose: str = "design", threads: int | None = None,
                   fail_ids: Iterable[int] = ()) -> ReplicateBatch:
    """Run ``task(lineage)`` for replicate ids ``0..R-1``.

    Results come back in replicate order whatever the scheduling. A replicate
    that raises is recorded in ``failures`` and left out; ids in ``fail_ids``
    are made to fail on purpose, which is how the partial-failure path is
    exercised.
    """
    fail_set = frozenset(fail_ids)

    def one(rid: int) -> tuple[bool, Any]:
        try:
            if rid in fail_set:
                raise ReplicateFailure(f"injected failure in replicate {rid}")
            return True, task(replicate_stream(seed, rid, purpose))
        except Exception as exc:  # a failed replicate must not sink the run
            log.warning("replicate %d failed: %s", rid, exc)
            return False, f"{type(exc).__name__}: {exc}"

    n_threads = resolve_threads(threads)
    if n_threads == 1:
        outcomes = [one(r) for r in range(replicates)]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(one, range(replicates)))
    batch = ReplicateBatch([], [])
    for rid, (ok, value) in enumerate(outcomes):
        if ok:
            batch.ids.append(rid)
            batch.results.append(value)
        else:
            batch.failures[rid] = value
    return batch


# ---------------------------------------------------------------------------
# risk summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecipeContext:
    s: Spectrum
    beta: BetaCoefficients
    noise: NoiseModel
    n: int
    params: dict[str, Any] = field(default_factory=dict)


def _recipe_min_norm(sample: DesignSample, ctx: RecipeContext) -> EstimateVector:
    return est.min_norm(sample, est.gram_factorize(sample))


def _recipe_zero(sample: DesignSample, ctx: RecipeContext) -> EstimateVector:
    return EstimateVector(np.zeros(sample.d), est.Provenance("zero"))


def _recipe_oracle(sample: DesignSample, ctx: RecipeContext) -> EstimateVector:
    return EstimateVector(ctx.beta.coeffs.copy(), est.Provenance("oracle"))


def _recipe_data_split(sample: DesignSample, ctx: RecipeContext) -> EstimateVector:
    return est.data_split(sample, ctx.params.get("n_splits")).theta


def _recipe_unbiased(sample: DesignSample, ctx: RecipeContext) -> EstimateVector:
    return est.unbiased_attempt(_recipe_min_norm(sample, ctx), ctx.s, ctx.n)


def _recipe_shrink(sample: DesignSample, ctx: RecipeContext) -> EstimateVector:
    return est.shrink_toward(_recipe_min_norm(sample, ctx), ctx.params["direction"],
                             ctx.params["c"])


def _recipe_ridge(sample: DesignSample, ctx: RecipeContext) -> EstimateVector:
    return est.ridge(sample, est.gram_factorize(sample), ctx.params["lambda"],
                     ctx.params.get("margin", est.RIDGE_MARGIN))


Recipe = Callable[[DesignSample, RecipeContext], EstimateVector]

RECIPES: dict[str, Recipe] = {
    "min_norm": _recipe_min_norm,
    "zero": _recipe_zero,
    "oracle": _recipe_oracle,
    "data_split": _recipe_data_split,
    "unbiased_attempt": _recipe_unbiased,
    "shrink_toward": _recipe_shrink,
    "ridge": _recipe_ridge,
}


@dataclass(frozen=True)
class RiskSummary:
    """Monte Carlo moments ``a = theta' S beta`` and ``b = theta' S theta``.

    ``ab_cov`` is the covariance of the two sample means.
    """

    a_mean: float
    a_se: float
    b_mean: float
    b_se: float
    ab_cov: float
    signal: float
    replicates: int
    failures: int = 0
    failed_ids: tuple[int, ...] = ()
    a: np.ndarray | None = field(default=None, repr=False, compare=False)
    b: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_draws(cls, a, b, signal: float, failed: dict[int, str] | None = None) -> "RiskSummary":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        r = a.size
        if r < 2:
            raise ValueError(f"need at least 2 successful replicates, got {r}")
        cov = float(np.cov(a, b, ddof=1)[0, 1]) / r
        failed = failed or {}
        return cls(float(a.mean()), float(a.std(ddof=1) / math.sqrt(r)),
                   float(b.mean()), float(b.std(ddof=1) / math.sqrt(r)), cov,
                   float(signal), r, len(failed), tuple(sorted(failed)), a, b)

    def g(self, c) -> np.ndarray | float:
        c = np.asarray(c, dtype=float)
        out = self.signal - 2.0 * c * self.a_mean + c * c * self.b_mean
        return float(out) if out.ndim == 0 else out

    def g_se(self, c) -> np.ndarray | float:
        c = np.asarray(c, dtype=float)
        var = (4.0 * c**2 * self.a_se**2 - 4.0 * c**3 * self.ab_cov + c**4 * self.b_se**2)
        out = np.sqrt(np.maximum(var, 0.0))
        return float(out) if out.ndim == 0 else out

    def g_diff_se(self, c1: float, c2: float) -> float:
        """Standard error of ``G(c1) - G(c2)`` (both from the same draws)."""
        if self.a is None or self.b is None:
            raise ValueError("per-replicate draws are not attached")
        diff = -2.0 * (c1 - c2) * self.a + (c1**2 - c2**2) * self.b
        return float(diff.std(ddof=1) / math.sqrt(diff.size))

    def scaled(self, k: float) -> "RiskSummary":
        """Summary of the estimator multiplied by ``k``."""
        a = None if self.a is None else k * self.a
        b = None if self.b is None else k * k * self.b
        return RiskSummary(k * self.a_mean, abs(k) * self.a_se, k * k * self.b_mean,
                           k * k * self.b_se, k**3 * self.ab_cov, self.signal,
                           self.replicates, self.failures, self.failed_ids, a, b)

    def to_dict(self) -> dict[str, Any]:
        return {
            "a_mean": self.a_mean, "a_se": self.a_se,
            "b_mean": self.b_mean, "b_se": self.b_se, "ab_cov": self.ab_cov,
            "signal": self.signal, "replicates": self.replicates,
            "failures": self.failures, "failed_ids": list(self.failed_ids),
        }


def mc_risk_summary(s: Spectrum, beta: BetaCoefficients, noise: NoiseModel, n: int,
                    recipe: str | Recipe = "min_norm", replicates: int = 100,
                    seed: int = 0, *, threads: int | None = None,
                    params: dict[str, Any] | None = None,
                    fail_ids: Iterable[int] = ()) -> RiskSummary:
    if replicates < 2:
        raise ValueError("replicates must be >= 2")
    fn = RECIPES[recipe] if isinstance(recipe, str) else recipe
    ctx = RecipeContext(s, beta, noise, n, dict(params or {}))

    def task(lineage) -> tuple[float, float]:
        sample = sample_design(s, n, noise, beta, lineage)
        return risk_moments(fn(sample, ctx).coeffs, beta, s)

    batch = run_replicates(task, replicates, seed, "design", threads, fail_ids)
    ab = np.array(batch.results, dtype=float).reshape(-1, 2)
    return RiskSummary.from_draws(ab[:, 0], ab[:, 1], beta.signal(s), batch.failures)


def empirical_c_opt(rs: RiskSummary) -> tuple[float, float]:
    """Vertex ``a_mean / b_mean`` of the risk quadratic with a delta-method se."""
    if rs.b_mean <= 0:
        raise ValueError(f"b_mean must be > 0, got {rs.b_mean:g}")
    c = rs.a_mean / rs.b_mean
    var = (rs.a_se**2 - 2.0 * c * rs.ab_cov + c * c * rs.b_se**2) / rs.b_mean**2
    return c, math.sqrt(max(var, 0.0))


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RiskCurve:
    control: str
    grid: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ValueError("grid must be a non-empty 1-d sequence")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.shape(self.mean) != grid.shape or np.shape(self.se) != grid.shape:
            raise ValueError("mean and se must match the grid length")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "se", np.asarray(self.se, dtype=float))

    @property
    def argmin(self) -> float:
        return float(self.grid[int(np.nanargmin(self.mean))])

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["control", "mean", "se"])
            for g, m, e in zip(self.grid, self.mean, self.se):
                writer.writerow([repr(float(g)), repr(float(m)), repr(float(e))])
        return path

    def to_dict(self) -> dict[str, Any]:
        return {
            "control": self.control,
            "grid": self.grid.tolist(),
            "mean": [None if math.isnan(v) else v for v in self.mean.tolist()],
            "se": [None if math.isnan(v) else v for v in self.se.tolist()],
            "meta": self.meta,
        }

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")
        return path


def default_c_grid(c_theory: float | None = None, points: int = 101) -> np.ndarray:
    top = 2.0 * max(1.0, c_theory if c_theory is not None else 1.0)
    return np.linspace(0.0, top, points)


def inflation_curve(rs: RiskSummary, grid=None, c_theory: float | None = None) -> RiskCurve:
    policy = "explicit"
    if grid is None:
        grid = default_c_grid(c_theory)
        policy = "uniform 101 on [0, 2 max(1, c_theory)]"
    grid = np.asarray(grid, dtype=float)
    c_hat, c_se = empirical_c_opt(rs) if rs.b_mean > 0 else (math.nan, math.nan)
    meta = {"grid_policy": policy, "c_theory": c_theory, "c_hat": c_hat, "c_hat_se": c_se}
    return RiskCurve("inflation_c", grid, rs.g(grid), rs.g_se(grid), meta)


# ---------------------------------------------------------------------------
# ridge path
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RidgePath:
    """Noise-averaged conditional risk of ``theta_lambda`` for one design.

    With ``A = U diag(w) U'`` the estimator is ``X' U D U' Y`` where
    ``D = diag(1/(w + lambda))``, so the risk for every penalty follows from
    a handful of n-vectors and one n x n matrix.
    """

    w: np.ndarray
    u_sb: np.ndarray      # U' X S beta
    yv: np.ndarray        # U' X beta
    k: np.ndarray         # U' X S X' U
    noise: np.ndarray     # U' Lambda U
    signal: float
    min_eig: float
    gram_trace: float

    @classmethod
    def build(cls, sample: DesignSample, s: Spectrum, beta: BetaCoefficients,
              cond_var: np.ndarray | None = None) -> "RidgePath":
        x = sample.x
        gram = x @ x.T
        gram = 0.5 * (gram + gram.T)
        w, u = linalg.eigh(gram)
        xs = x * s.eigenvalues
        k = u.T @ (xs @ x.T) @ u
        cv = sample.cond_var if cond_var is None else cond_var
        cv = np.zeros(sample.n) if cv is None else np.asarray(cv, dtype=float)
        return cls(w, u.T @ (xs @ beta.coeffs), u.T @ (x @ beta.coeffs),
                   0.5 * (k + k.T), (u.T * cv) @ u, beta.signal(s),
                   float(w[0]), float(w.sum()))

    def admissible(self, lam, margin: float = est.RIDGE_MARGIN) -> np.ndarray:
        return np.asarray(lam, dtype=float) > -(1.0 - margin) * self.min_eig

    def risk(self, lam) -> np.ndarray | float:
        lam = np.asarray(lam, dtype=float)
        scalar = lam.ndim == 0
        lam = np.atleast_1d(lam)
        dm = 1.0 / (self.w[None, :] + lam[:, None])          # (L, n)
        v = dm * self.yv[None, :]
        sig = self.signal - 2.0 * v @ self.u_sb + np.einsum("li,ij,lj->l", v, self.k, v)
        nz = np.einsum("li,ij,lj,ij->l", dm, self.noise, dm, self.k)
        out = sig + nz
        return float(out[0]) if scalar else out


def default_lambda_grid(min_eigs, gram_traces, n: int, per_side: int = 25) -> np.ndarray:
    """Signed-log grid: ``per_side`` points on each side of zero spanning
    ``[-0.9 median(min_eig), 10 median(tr(A))/n]``."""
    neg_end = 0.9 * float(np.median(min_eigs))
    pos_end = 10.0 * float(np.median(gram_traces)) / n
    neg = -np.geomspace(neg_end, neg_end * 1e-4, per_side)
    pos = np.geomspace(pos_end * 1e-6, pos_end, per_side)
    return np.concatenate([neg, pos])


@dataclass(frozen=True, eq=False)
class RidgeCurveResult:
    curve: RiskCurve
    risks: np.ndarray           # (replicates, grid); NaN where skipped
    skips: np.ndarray           # per grid point
    replicate_ids: tuple[int, ...]
    failures: int
    extras: tuple[Any, ...] = ()

    @property
    def argmins(self) -> np.ndarray:
        return self.curve.grid[np.nanargmin(self.risks, axis=1)]


def ridge_curve(s: Spectrum, beta: BetaCoefficients, noise: NoiseModel, n: int,
                lambdas=None, replicates: int = 100, seed: int = 0, *,
                margin: float = est.RIDGE_MARGIN, threads: int | None = None,
                fail_ids: Iterable[int] = (),
                extra: Callable[[DesignSample, RidgePath], Any] | None = None
                ) -> RidgeCurveResult:
    """MC mean of the per-draw conditional risk along a ridge path.

    ``extra(sample, path)`` runs on every replicate and its results are kept
    in ``extras``, in replicate order.
    """
    if replicates < 2:
        raise ValueError("replicates must be >= 2")

    def task(lineage) -> tuple[RidgePath, Any]:
        sample = sample_design(s, n, noise, beta, lineage)
        path = RidgePath.build(sample, s, beta)
        return path, (extra(sample, path) if extra else None)

    batch = run_replicates(task, replicates, seed, "design", threads, fail_ids)
    paths: list[RidgePath] = [p for p, _ in batch.results]
    extras = tuple(e for _, e in batch.results) if extra else ()
    if not paths:
        raise ValueError("every replicate failed")
    policy = "explicit"
    if lambdas is None:
        lambdas = default_lambda_grid([p.min_eig for p in paths],
                                      [p.gram_trace for p in paths], n)
        policy = "signed-log 25+25 on [-0.9 median min_eig, 10 tr(A)/n]"
    grid = np.asarray(lambdas, dtype=float)
    risks = np.full((len(paths), grid.size), np.nan)
    for i, p in enumerate(paths):
        ok = p.admissible(grid, margin)
        if ok.any():
            risks[i, ok] = p.risk(grid[ok])
    skips = np.isnan(risks).sum(axis=0)
    if skips.sum():
        log.info("ridge sweep: %d (replicate, lambda) points below the margin skipped",
                 int(skips.sum()))
    counts = len(paths) - skips
    if np.all(counts == 0):
        raise ValueError("empty effective lambda grid")
    valid = ~np.isnan(risks)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(valid, risks, 0.0).sum(axis=0) / counts
        dev = np.where(valid, risks - mean, 0.0)
        se = np.sqrt((dev * dev).sum(axis=0) / (counts - 1) / counts)
    se = np.where(counts > 1, se, np.nan)
    meta = {"grid_policy": policy, "margin": margin,
            "skips": skips.tolist(), "failures": len(batch.failures)}
    curve = RiskCurve("ridge_lambda", grid, mean, se, meta)
    return RidgeCurveResult(curve, risks, skips, tuple(batch.ids), len(batch.failures),
                            extras)


def conditional_risk(sample: DesignSample, s: Spectrum, beta: BetaCoefficients, lam: float,
                     cond_var: np.ndarray | None = None) -> float:
    """Noise-averaged risk of ``theta_lambda`` for a fixed design, by direct solves."""
    x = sample.x
    shifted = x @ x.T + lam * np.eye(sample.n)
    mean_theta = x.T @ linalg.solve(shifted, x @ beta.coeffs, assume_a="sym")
    sig = excess_risk(mean_theta, beta, s)
    cv = sample.cond_var if cond_var is None else cond_var
    if cv is None or not np.any(cv):
        return sig
    h = linalg.solve(shifted, x, assume_a="sym")            # (A + lam)^{-1} X
    p = (h * s.eigenvalues) @ h.T
    return sig + float(np.dot(np.asarray(cv), np.diag(p)))


def risk_derivative_at_zero(sample: DesignSample, gf: GramFactor, beta: BetaCoefficients,
                            sigma2: float) -> float:
    """Exact ``dR/dlambda`` at ``lambda = 0`` for an isotropic covariance ``S = s I``.

    The signal terms cancel at zero because ``(P_X - I) X' = 0``, leaving
    ``-2 s sigma^2 tr((X X')^{-2})``.
    """
    lam_sq = sample.sqrt_lam**2
    if not np.allclose(lam_sq, lam_sq[0], rtol=1e-12, atol=0.0):
        raise ValueError("risk derivative formula requires an isotropic covariance")
    if sigma2 == 0.0:
        return 0.0
    inv = gf.inverse()
    return float(-2.0 * lam_sq[0] * sigma2 * np.sum(inv * inv))

"""Acceptance suite: thirteen numbered criteria run at a fast or full tier."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .. import estimators as est
from ..sampling import NoiseModel, make_beta_custom, replicate_stream, sample_design
from ..spectrum import Spectrum
from .config import ExperimentConfig
from .scenarios import ScenarioReport, Verdict, jsonable, run_scenario

TIERS = ("fast", "full")


@dataclass
class CriterionResult:
    cid: int
    title: str
    verdicts: list[Verdict]
    seconds: float
    runtime_limit: float | None = None
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def runtime_ok(self) -> bool:
        return self.runtime_limit is None or self.seconds < self.runtime_limit

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts) and self.runtime_ok

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        parts = []
        for v in self.verdicts:
            parts.append(f"{v.check_id}={'ok' if v.passed else 'FAILED'}")
        if self.runtime_limit is not None:
            parts.append(f"runtime {self.seconds:.1f}s<{self.runtime_limit:g}s="
                         f"{'ok' if self.runtime_ok else 'FAILED'}")
        return f"[{status}] criterion {self.cid:2d} {self.title}: " + ", ".join(parts)


@dataclass
class AcceptanceSummary:
    tier: str
    seed: int
    results: list[CriterionResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def verdict_block(self) -> dict[str, Any]:
        """Deterministic part of the summary: no timings."""
        return jsonable({
            "tier": self.tier,
            "seed": self.seed,
            "criteria": [{"id": r.cid, "title": r.title,
                          "verdicts": [v.to_dict() for v in r.verdicts]}
                         for r in self.results],
        })

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdicts": self.verdict_block(),
            "passed": self.passed,
            "criteria_passed": {str(r.cid): r.passed for r in self.results},
            "timing": {str(r.cid): {"seconds": r.seconds, "limit": r.runtime_limit,
                                    "ok": r.runtime_ok} for r in self.results},
            "details": jsonable({str(r.cid): r.details for r in self.results}),
        }

    def verdict_json(self) -> str:
        return json.dumps(self.verdict_block(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]


def _reps(tier: str, full: int, fast: int) -> int:
    return full if tier == "full" else fast


def _block(n: int, d: int, q: float) -> dict[str, Any]:
    return {"constructor": "block", "params": {"n": n, "d": d, "q": q}}


def _gauss(sigma2: float) -> dict[str, Any]:
    if sigma2 == 0:
        return {"kind": "none", "sigma": 0.0, "sigma_max": None}
    return {"kind": "gaussian", "sigma": math.sqrt(sigma2), "sigma_max": None}


def _cfg(seed: int, **kw) -> ExperimentConfig:
    return ExperimentConfig.from_dict({"seed": seed, **kw})


def _run(cfg: ExperimentConfig, threads: int | None) -> ScenarioReport:
    return run_scenario(cfg, threads=threads)


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def c01_isotropic(tier: str, seed: int, threads) -> CriterionResult:
    n, d = 50, 500
    cfg = _cfg(seed, scenario="inflation", n=n, replicates=500,
               spectrum={"constructor": "isotropic", "params": {"d": d}},
               beta={"kind": "topk", "k": d}, noise=_gauss(0.0))
    t0 = time.perf_counter()
    rep = _run(cfg, threads)
    seconds = time.perf_counter() - t0
    sm = rep.results["summary"]
    c_hat, c_se = sm["c_hat"], sm["c_hat_se"]
    tol = max(0.05, 3.0 * c_se)
    target = n / d
    rel_se = sm["a_se"] / sm["a_mean"]
    verdicts = [
        Verdict("c_hat", abs(c_hat - 1.0) <= tol, c_hat, f"1 +/- {tol:.4g}"),
        Verdict("mean_projection", abs(sm["a_mean"] / target - 1.0) <= 3.0 * rel_se,
                sm["a_mean"], f"(n/d)(1 +/- 3 rel se), n/d = {target:g}"),
    ]
    return CriterionResult(1, "noiseless isotropic baseline", verdicts, seconds, 10.0,
                           {"c_hat": c_hat, "c_hat_se": c_se, "a_mean": sm["a_mean"]})


def c02_block_inflation(tier: str, seed: int, threads) -> CriterionResult:
    n, d, q = 100, 100_000, 0.1
    cfg = _cfg(seed, scenario="inflation", n=n, replicates=_reps(tier, 200, 60),
               spectrum=_block(n, d, q), beta={"kind": "topk", "k": n}, noise=_gauss(0.0),
               params={"z_inflation": 5.0, "ratio_max": 0.75, "prediction_band": 0.15})
    t0 = time.perf_counter()
    rep = _run(cfg, threads)
    sm = rep.results["summary"]
    return CriterionResult(2, "block-model inflation", list(rep.verdicts),
                           time.perf_counter() - t0, None,
                           {"c_hat": sm["c_hat"], "c_hat_se": sm["c_hat_se"],
                            "G_ratio": sm["G_ratio"],
                            "predicted": rep.theory["prediction"]["c_opt_pred"]})


BATTERY: list[tuple[str, dict[str, Any], int, float]] = [
    ("block n50 q.05 s0", _block(50, 20_000, 0.05), 50, 0.0),
    ("block n50 q.05 s1", _block(50, 20_000, 0.05), 50, 1.0),
    ("block n100 q.1 s1", _block(100, 20_000, 0.1), 100, 1.0),
    ("two-regime n50 s0", {"constructor": "two_regime", "params": {
        "n": 50, "d": 20_000, "q": 0.03, "a_min": 0.5, "a0": 0.5, "a1": 0.05, "a2": 0.05}},
     50, 0.0),
    ("two-regime n50 s1", {"constructor": "two_regime", "params": {
        "n": 50, "d": 20_000, "q": 0.03, "a_min": 0.5, "a0": 0.5, "a1": 0.05, "a2": 0.05}},
     50, 1.0),
    ("two-regime n100 s0", {"constructor": "two_regime", "params": {
        "n": 100, "d": 40_000, "q": 0.03, "a_min": 0.5, "a0": 0.5, "a1": 0.05, "a2": 0.05}},
     100, 0.0),
]


def c03_prediction_battery(tier: str, seed: int, threads) -> CriterionResult:
    verdicts: list[Verdict] = []
    details: dict[str, Any] = {}
    t0 = time.perf_counter()
    for j, (label, spectrum_cfg, n, sigma2) in enumerate(BATTERY):
        cfg = _cfg(seed + j, scenario="inflation", n=n, replicates=_reps(tier, 200, 60),
                   spectrum=spectrum_cfg, beta={"kind": "topk", "k": n}, noise=_gauss(sigma2))
        rep = _run(cfg, threads)
        sm = rep.results["summary"]
        pred = rep.theory["prediction"]
        weak = rep.results["assumptions"]["weak"]["passed"]
        rel = abs(sm["c_hat"] - pred["c_opt_pred"]) / pred["c_opt_pred"]
        tol = max(0.15, 5.0 * sm["c_hat_se"] / pred["c_opt_pred"])
        ok = weak and pred["q"] <= 0.1 * (1.0 + 1e-9) and rel <= tol
        verdicts.append(Verdict(label.replace(" ", "_"), ok,
                                {"rel_err": rel, "q": pred["q"], "weak_passed": weak},
                                f"weak assumptions hold, q <= 0.1, rel err <= {tol:.4g}"))
        details[label] = {"c_hat": sm["c_hat"], "c_hat_se": sm["c_hat_se"],
                          "predicted": pred["c_opt_pred"], "rel_err": rel, "q": pred["q"]}
    return CriterionResult(3, "c_opt prediction battery", verdicts,
                           time.perf_counter() - t0, None, details)


def _theory_report(tier: str, seed: int, threads) -> ScenarioReport:
    n, d, q = 50, 5000, 0.1
    cfg = _cfg(seed, scenario="theory_check", n=n, replicates=_reps(tier, 1000, 300),
               spectrum=_block(n, d, q), beta={"kind": "topk", "k": n}, noise=_gauss(1.0),
               params={"indices": [0, d // 2, d - 1], "z": 3.0})
    return _run(cfg, threads)


def c04_06_theory(tier: str, seed: int, threads) -> list[CriterionResult]:
    t0 = time.perf_counter()
    rep = _theory_report(tier, seed, threads)
    seconds = time.perf_counter() - t0
    by_id = {v.check_id: v for v in rep.verdicts}
    c4 = [by_id["contains.tr_inv"], by_id["contains.tr_inv2"]]
    c5 = [v for k, v in by_id.items() if k.startswith("contains.proj_diag_")]
    c5.append(by_id["projector_trace"])
    c6 = [by_id["contains.noise_term"]]
    bounds = rep.theory["bounds"]
    mc = rep.results["mc"]["values"]
    det = {k: {"mc": mc[k], "bound": bounds[k]} for k in bounds}
    return [CriterionResult(4, "trace-inverse bounds", c4, seconds, None,
                            {k: det[k] for k in ("tr_inv", "tr_inv2")}),
            CriterionResult(5, "projection diagonal bounds", c5, 0.0, None,
                            {k: v for k, v in det.items() if k.startswith("proj_diag")}),
            CriterionResult(6, "noise-term bounds", c6, 0.0, None,
                            {"noise_term": det["noise_term"]})]


def c07_ridge(tier: str, seed: int, threads) -> CriterionResult:
    d, n = 100, 50
    cfg = _cfg(seed, scenario="ridge_sweep", n=n, replicates=200,
               spectrum={"constructor": "isotropic", "params": {"d": d}},
               beta={"kind": "topk", "k": d}, noise=_gauss(1.0),
               params={"argmin_share": 0.95, "fd_tol": 0.05})
    t0 = time.perf_counter()
    rep = _run(cfg, threads)
    r = rep.results
    return CriterionResult(7, "isotropic ridge positivity", list(rep.verdicts),
                           time.perf_counter() - t0, None,
                           {k: r[k] for k in ("argmin_positive_share",
                                              "derivative_negative_share", "fd_max_rel_err")})


def c08_spiked(tier: str, seed: int, threads) -> CriterionResult:
    cfg = _cfg(seed, scenario="spiked", n=100, replicates=_reps(tier, 300, 100),
               params={"d": 2000, "spike": 2.0, "ratio": 2.0, "z_inflation": 3.0})
    t0 = time.perf_counter()
    rep = _run(cfg, threads)
    sm = rep.results["summary"]
    return CriterionResult(8, "spiked covariance inflation", list(rep.verdicts),
                           time.perf_counter() - t0, None,
                           {"c_hat": sm["c_hat"], "c_hat_se": sm["c_hat_se"],
                            "sigma": rep.results["sigma"]})


def c09_data_split(tier: str, seed: int, threads) -> CriterionResult:
    n, d, q = 400, 40_000, 0.1
    cfg = _cfg(seed, scenario="data_split", n=n, replicates=_reps(tier, 200, 40),
               spectrum=_block(n, d, q), beta={"kind": "topk", "k": n}, noise=_gauss(0.25),
               n_splits=20)
    t0 = time.perf_counter()
    rep = _run(cfg, threads)
    r = rep.results
    return CriterionResult(9, "data splitting", list(rep.verdicts), time.perf_counter() - t0,
                           None, {k: r[k] for k in ("c_star_mc", "c_hat_star_mean", "G_plugin",
                                                    "G_opt_mn", "G_ds_min", "q")})


def c10_unbiased(tier: str, seed: int, threads) -> CriterionResult:
    cfg = _cfg(seed, scenario="unbiased_divergence", n=50, replicates=_reps(tier, 100, 30),
               noise=_gauss(1.0),
               params={"q": 0.125, "dn_ratios": [10, 100, 1000], "blowup_factor": 10.0})
    t0 = time.perf_counter()
    rep = _run(cfg, threads)
    return CriterionResult(10, "unbiased-attempt divergence", list(rep.verdicts),
                           time.perf_counter() - t0, None, {"points": rep.results["points"]})


def c11_direction_shrink(tier: str, seed: int, threads) -> CriterionResult:
    cfg = _cfg(seed, scenario="direction_shrink", n=50, replicates=_reps(tier, 100, 30),
               params={"q": 0.05, "dn_ratio": 1000, "c": 0.5})
    t0 = time.perf_counter()
    rep = _run(cfg, threads)
    return CriterionResult(11, "direction-shrink blow-up", list(rep.verdicts),
                           time.perf_counter() - t0, None,
                           {"G": rep.results["G"], "G_se": rep.results["G_se"]})


def c12_moments(tier: str, seed: int, threads) -> CriterionResult:
    cfg = _cfg(seed, scenario="moments_check", replicates=2,
               params={"dim": 5, "draws": 200_000, "z": 3.0})
    t0 = time.perf_counter()
    rep = _run(cfg, threads)
    return CriterionResult(12, "quadratic-form moments", list(rep.verdicts),
                           time.perf_counter() - t0, None,
                           {k: rep.results[k] for k in ("two_form", "three_form")})


def estimator_invariants(instances: int, seed: int) -> dict[str, int]:
    """Count instances passing each estimator invariant.

    Instances draw ``n`` in [1, 30], ``d`` in [2n, 4n + 10] and eigenvalues
    log-uniform on [0.1, 10].
    """
    passed = {k: 0 for k in ("interpolation", "row_space", "minimal_norm", "idempotent",
                             "symmetric", "trace", "ridge_continuity", "ridge_zero",
                             "linearity")}
    for i in range(instances):
        rng = replicate_stream(seed, i, "invariants").generator()
        n = int(rng.integers(1, 31))
        d = int(rng.integers(2 * n, 4 * n + 11))
        lam = np.exp(rng.uniform(np.log(0.1), np.log(10.0), d))
        s = Spectrum.from_eigenvalues(lam)
        beta = make_beta_custom(s, rng.standard_normal(d))
        sample = sample_design(s, n, NoiseModel.gaussian(0.5), beta, rng)
        gf = est.gram_factorize(sample)
        theta = est.min_norm(sample, gf).coeffs
        y = sample.y
        x = sample.x
        resid = np.linalg.norm(x @ theta - y)
        passed["interpolation"] += resid <= 1e-8 * max(1.0, np.linalg.norm(y))
        proj_theta = est.project(sample, gf, theta)
        passed["row_space"] += np.linalg.norm(theta - proj_theta) <= 1e-8 * np.linalg.norm(theta)
        w = rng.standard_normal(d)
        other = theta + (w - est.project(sample, gf, w))
        passed["minimal_norm"] += (np.linalg.norm(x @ other - y)
                                   <= 1e-8 * max(1.0, np.linalg.norm(y))
                                   and np.linalg.norm(theta) <= np.linalg.norm(other))
        pw = est.project(sample, gf, w)
        passed["idempotent"] += (np.linalg.norm(est.project(sample, gf, pw) - pw)
                                 <= 1e-8 * np.linalg.norm(w))
        u = rng.standard_normal(d)
        asym = abs(np.dot(u, pw) - np.dot(w, est.project(sample, gf, u)))
        passed["symmetric"] += asym <= 1e-8 * np.linalg.norm(u) * np.linalg.norm(w)
        passed["trace"] += abs(est.projector_trace(gf) - n) <= 1e-6
        scale = np.trace(gf.gram) / n
        gaps = [np.linalg.norm(est.ridge(sample, gf, f * scale).coeffs - theta)
                for f in (1e-2, 1e-4, 1e-6)]
        passed["ridge_continuity"] += bool(gaps[0] > gaps[1] > gaps[2]
                                           and gaps[2] <= 1e-4 * max(1.0, np.linalg.norm(theta)))
        r0 = est.ridge(sample, gf, 0.0).coeffs
        passed["ridge_zero"] += np.linalg.norm(r0 - theta) <= 1e-8 * max(1.0, np.linalg.norm(theta))
        y1 = rng.standard_normal(n)
        t1 = est.min_norm(sample, gf, y1).coeffs
        t2 = est.min_norm(sample, gf, y - y1).coeffs
        scale_t = max(1.0, np.linalg.norm(t1) + np.linalg.norm(t2))
        passed["linearity"] += np.linalg.norm(t1 + t2 - theta) <= 1e-10 * scale_t
    return {k: int(v) for k, v in passed.items()}


def c13_invariants(tier: str, seed: int, threads) -> CriterionResult:
    instances = 200
    t0 = time.perf_counter()
    counts = estimator_invariants(instances, seed)
    verdicts = [Verdict(k, v == instances, f"{v}/{instances}", "100% of instances")
                for k, v in counts.items()]
    return CriterionResult(13, "estimator invariant suite", verdicts,
                           time.perf_counter() - t0, 30.0, counts)


CRITERIA: list[tuple[tuple[int, ...], Callable[..., Any]]] = [
    ((1,), c01_isotropic),
    ((2,), c02_block_inflation),
    ((3,), c03_prediction_battery),
    ((4, 5, 6), c04_06_theory),
    ((7,), c07_ridge),
    ((8,), c08_spiked),
    ((9,), c09_data_split),
    ((10,), c10_unbiased),
    ((11,), c11_direction_shrink),
    ((12,), c12_moments),
    ((13,), c13_invariants),
]


def criterion_seed(seed: int, cid: int) -> int:
    return seed * 1000 + cid


def run_criterion(cid: int, tier: str = "full", seed: int = 0,
                  threads: int | None = None) -> list[CriterionResult]:
    for ids, fn in CRITERIA:
        if cid in ids:
            out = fn(tier, criterion_seed(seed, ids[0]), threads)
            return out if isinstance(out, list) else [out]
    raise KeyError(f"no criterion {cid}")


def run_acceptance_suite(tier: str = "fast", seed: int = 0, threads: int | None = None,
                         only: list[int] | None = None,
                         progress: Callable[[CriterionResult], None] | None = None
                         ) -> AcceptanceSummary:
    if tier not in TIERS:
        raise ValueError(f"tier must be one of {TIERS}")
    results: list[CriterionResult] = []
    for ids, fn in CRITERIA:
        if only is not None and not set(ids) & set(only):
            continue
        out = fn(tier, criterion_seed(seed, ids[0]), threads)
        for r in out if isinstance(out, list) else [out]:
            if only is None or r.cid in only:
                results.append(r)
                if progress:
                    progress(r)
    return AcceptanceSummary(tier, seed, results)

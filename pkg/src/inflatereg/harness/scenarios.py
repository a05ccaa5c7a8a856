"""Scenario runners: each turns a validated config into a report with verdicts."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .. import estimators as est
from ..risk import (RiskCurve, RiskSummary, empirical_c_opt, inflation_curve, mc_risk_summary,
                    ridge_curve, risk_derivative_at_zero, risk_moments, run_replicates)
from ..sampling import (BetaCoefficients, NoiseModel, make_beta_custom, make_beta_topk,
                        replicate_stream, sample_design)
from ..spectrum import (AssumptionSet, Spectrum, check_assumptions, functionals,
                        make_block_spectrum, make_shrink_adversary_spectrum, make_spiked_spectrum)
from ..theory import (TheorySlack, c_opt_prediction, noise_term_bounds, proj_sigma_proj_bounds,
                      projection_diag_bounds, projection_moments_mc, quadratic_form_moments,
                      sigma2_functional_mc, trace_inverse_bounds)
from .config import ConfigError, ExperimentConfig


@dataclass(frozen=True)
class Verdict:
    check_id: str
    passed: bool
    measured: Any
    required: str

    def to_dict(self) -> dict[str, Any]:
        return {"check_id": self.check_id, "passed": bool(self.passed),
                "measured": jsonable(self.measured), "required": self.required}


@dataclass
class ScenarioReport:
    config: dict[str, Any]
    results: dict[str, Any] = field(default_factory=dict)
    theory: dict[str, Any] = field(default_factory=dict)
    verdicts: list[Verdict] = field(default_factory=list)
    curves: dict[str, RiskCurve] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, check_id: str) -> Verdict:
        for v in self.verdicts:
            if v.check_id == check_id:
                return v
        raise KeyError(check_id)

    def check(self, check_id: str, passed: bool, measured: Any, required: str) -> None:
        self.verdicts.append(Verdict(check_id, bool(passed), measured, required))

    def to_dict(self) -> dict[str, Any]:
        return jsonable({
            "config": self.config,
            "results": self.results,
            "theory": self.theory,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "passed": self.passed,
            "curves": {k: c.to_dict() for k, c in self.curves.items()},
            "failures": self.failures,
            "timing": self.timing,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def write(self, out_root: str | Path) -> Path:
        cfg = self.config
        out = Path(out_root) / f"{cfg['scenario']}-{cfg['seed']}"
        out.mkdir(parents=True, exist_ok=True)
        for name, curve in self.curves.items():
            curve.to_csv(out / f"{name}.csv")
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        return out


def jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def _assumptions(s: Spectrum, beta: BetaCoefficients, n: int, sigma2: float,
                 sigma_max2: float) -> dict[str, Any]:
    return {a.value: check_assumptions(s, beta, n, sigma2, sigma_max2, a).to_dict()
            for a in AssumptionSet}


def _noise_level(cfg: ExperimentConfig, s: Spectrum, noise: NoiseModel,
                 threads: int | None) -> float:
    sig2 = cfg.sigma2()
    if sig2 is not None:
        return sig2
    value, _ = sigma2_functional_mc(s, cfg.n, noise, cfg.replicates, cfg.seed, threads)
    return value


def _c_grid(cfg: ExperimentConfig):
    return cfg.c_grid.get("values") if cfg.c_grid.get("policy") == "explicit" else None


def _summary_dict(rs: RiskSummary) -> dict[str, Any]:
    c_hat, c_se = empirical_c_opt(rs)
    g1 = rs.g(1.0)
    g_hat = rs.g(c_hat)
    return {**rs.to_dict(), "c_hat": c_hat, "c_hat_se": c_se, "G_1": g1, "G_1_se": rs.g_se(1.0),
            "G_c_hat": g_hat, "G_c_hat_se": rs.g_se(c_hat), "G_ratio": g_hat / g1,
            "G_gap_se": rs.g_diff_se(c_hat, 1.0)}


def _inflation_verdicts(rep: ScenarioReport, rs_info: dict[str, Any], pred: float | None,
                        params: dict[str, Any], z_inflation: float) -> None:
    c_hat, c_se = rs_info["c_hat"], rs_info["c_hat_se"]
    rep.check("c_hat_above_1", c_hat - 1.0 >= z_inflation * c_se,
              {"c_hat": c_hat, "se": c_se}, f"c_hat - 1 >= {z_inflation:g} se")
    ratio_max = params.get("ratio_max", 0.75)
    rep.check("risk_ratio", rs_info["G_ratio"] <= ratio_max, rs_info["G_ratio"],
              f"G(c_hat)/G(1) <= {ratio_max:g}")
    if pred is not None:
        band = params.get("prediction_band", 0.15)
        rel = abs(c_hat - pred) / pred
        tol = max(band, 5.0 * c_se / pred)
        rep.check("prediction", rel <= tol, {"rel_err": rel, "predicted": pred},
                  f"|c_hat - pred|/pred <= max({band:g}, 5 rel se) = {tol:.4g}")


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def _run_inflation(cfg: ExperimentConfig, rep: ScenarioReport, threads, fail_ids) -> None:
    s = cfg.build_spectrum()
    beta = cfg.build_beta(s)
    noise = cfg.noise_model()
    sigma2 = _noise_level(cfg, s, noise, threads)
    rs = mc_risk_summary(s, beta, noise, cfg.n, "min_norm", cfg.replicates, cfg.seed,
                         threads=threads, fail_ids=fail_ids)
    pred = c_opt_prediction(s, beta, cfg.n, sigma2)
    info = _summary_dict(rs)
    f = functionals(s, cfg.n)
    rep.results.update(summary=info, sigma2=sigma2, r_n=f.r_n, rho=f.rho, d=s.d,
                       assumptions=_assumptions(s, beta, cfg.n, sigma2, noise.sigma_max2))
    rep.theory["prediction"] = pred.to_dict()
    rep.curves["inflation"] = inflation_curve(rs, _c_grid(cfg), pred.c_opt_pred)
    rep.failures["replicates"] = rs.failures
    _inflation_verdicts(rep, info, pred.c_opt_pred, cfg.params,
                        cfg.params.get("z_inflation", 5.0))


def _run_spiked(cfg: ExperimentConfig, rep: ScenarioReport, threads, fail_ids) -> None:
    p = cfg.params
    s = make_spiked_spectrum(int(p["d"]), float(p["spike"]), cfg.n)
    beta = make_beta_topk(s, 1)
    # top eigenvector is v/|v|, so beta'v = c_1 |v|
    beta_v = float(beta.coeffs[0]) * math.sqrt(float(p["spike"]))
    sigma = beta_v / float(p["ratio"])
    noise = NoiseModel.gaussian(sigma)
    rs = mc_risk_summary(s, beta, noise, cfg.n, "min_norm", cfg.replicates, cfg.seed,
                         threads=threads, fail_ids=fail_ids)
    info = _summary_dict(rs)
    pred = c_opt_prediction(s, beta, cfg.n, sigma**2)
    rep.results.update(summary=info, sigma=sigma, beta_v=beta_v, d=s.d)
    rep.theory["prediction"] = pred.to_dict()
    rep.curves["inflation"] = inflation_curve(rs, _c_grid(cfg), pred.c_opt_pred)
    rep.failures["replicates"] = rs.failures
    z = p.get("z_inflation", 3.0)
    rep.check("c_hat_above_1", info["c_hat"] - 1.0 >= z * info["c_hat_se"],
              {"c_hat": info["c_hat"], "se": info["c_hat_se"]}, f"c_hat - 1 >= {z:g} se")


def _run_ridge(cfg: ExperimentConfig, rep: ScenarioReport, threads, fail_ids) -> None:
    s = cfg.build_spectrum()
    beta = cfg.build_beta(s)
    noise = cfg.noise_model()
    iso = s.is_isotropic and noise.homoscedastic

    def extra(sample, path) -> dict[str, float] | None:
        if not iso:
            return None
        gf = est.gram_factorize(sample)
        deriv = risk_derivative_at_zero(sample, gf, beta, noise.sigma_max2)
        delta = 1e-4 * path.gram_trace / cfg.n
        fd = (path.risk(delta) - path.risk(0.0)) / delta
        return {"derivative": deriv, "finite_difference": fd}

    grid = cfg.lambda_grid.get("values") if cfg.lambda_grid.get("policy") == "explicit" else None
    res = ridge_curve(s, beta, noise, cfg.n, grid, cfg.replicates, cfg.seed,
                      margin=cfg.ridge_margin, threads=threads, fail_ids=fail_ids, extra=extra)
    argmins = res.argmins
    share_pos = float(np.mean(argmins > 0))
    rep.curves["ridge"] = res.curve
    rep.failures["replicates"] = res.failures
    rep.failures["skipped_points"] = int(res.skips.sum())
    rep.results.update(argmin_positive_share=share_pos, argmins=argmins,
                       curve_argmin=res.curve.argmin)
    need_share = cfg.params.get("argmin_share", 0.95)
    rep.check("argmin_positive", share_pos >= need_share, share_pos,
              f"share of replicates with argmin lambda > 0 >= {need_share:g}")
    if iso and noise.sigma_max2 > 0:
        deriv = np.array([e["derivative"] for e in res.extras])
        fd = np.array([e["finite_difference"] for e in res.extras])
        rel = np.abs(fd - deriv) / np.abs(deriv)
        rep.results.update(derivative_negative_share=float(np.mean(deriv < 0)),
                           derivative_mean=float(deriv.mean()),
                           fd_max_rel_err=float(rel.max()))
        rep.check("derivative_negative", bool(np.all(deriv < 0)), float(np.mean(deriv < 0)),
                  "dR/dlambda at 0 < 0 in every replicate")
        tol = cfg.params.get("fd_tol", 0.05)
        rep.check("finite_difference", float(rel.max()) <= tol, float(rel.max()),
                  f"max relative finite-difference error <= {tol:g}")


def _run_data_split(cfg: ExperimentConfig, rep: ScenarioReport, threads, fail_ids) -> None:
    s = cfg.build_spectrum()
    beta = cfg.build_beta(s)
    noise = cfg.noise_model()
    sigma2 = _noise_level(cfg, s, noise, threads)
    n_splits = cfg.splits() or est.default_splits(cfg.n)
    signal = beta.signal(s)

    def task(lineage) -> tuple[float, ...]:
        sample = sample_design(s, cfg.n, noise, beta, lineage)
        a_mn, b_mn = risk_moments(est.min_norm(sample, est.gram_factorize(sample)).coeffs,
                                  beta, s)
        split = est.data_split(sample, n_splits)
        a_ds, b_ds = risk_moments(split.theta.coeffs, beta, s)
        c_star = est.estimate_c_star(split.theta, split.holdout)
        return a_mn, b_mn, a_ds, b_ds, c_star

    batch = run_replicates(task, cfg.replicates, cfg.seed, "design", threads, fail_ids)
    arr = np.array(batch.results).reshape(-1, 5)
    rs_mn = RiskSummary.from_draws(arr[:, 0], arr[:, 1], signal, batch.failures)
    rs_ds = RiskSummary.from_draws(arr[:, 2], arr[:, 3], signal, batch.failures)
    c_hats = arr[:, 4]
    r = arr.shape[0]
    c_star_mc = rs_ds.a_mean / rs_ds.b_mean
    c_hat_mean = float(c_hats.mean())
    g_plug = signal - 2.0 * c_hats * arr[:, 2] + c_hats**2 * arr[:, 3]
    g_plug_mean = float(g_plug.mean())
    g_plug_se = float(g_plug.std(ddof=1) / math.sqrt(r))
    c_opt_mn, _ = empirical_c_opt(rs_mn)
    g_opt_mn = rs_mn.g(c_opt_mn)
    g_opt_mn_se = rs_mn.g_se(c_opt_mn)
    pooled = math.hypot(g_plug_se, g_opt_mn_se)
    g_ds_min = signal - rs_ds.a_mean**2 / rs_ds.b_mean
    f = functionals(s, cfg.n)
    pred = c_opt_prediction(s, beta, cfg.n, sigma2)
    q = pred.q
    rep.results.update(
        n_splits=n_splits, block_sizes=est.split_sizes(cfg.n, n_splits),
        c_star_mc=c_star_mc, c_hat_star_mean=c_hat_mean,
        c_hat_star_se=float(c_hats.std(ddof=1) / math.sqrt(r)),
        G_plugin=g_plug_mean, G_plugin_se=g_plug_se, c_opt_mn=c_opt_mn,
        G_opt_mn=g_opt_mn, G_opt_mn_se=g_opt_mn_se, G_ds_min=g_ds_min,
        summary_mn=rs_mn.to_dict(), summary_ds=rs_ds.to_dict(), sigma2=sigma2,
        r_n=f.r_n, rho=f.rho, q=q)
    rep.theory["prediction"] = pred.to_dict()
    rep.curves["inflation_mn"] = inflation_curve(rs_mn, _c_grid(cfg), pred.c_opt_pred)
    rep.curves["inflation_ds"] = inflation_curve(rs_ds, _c_grid(cfg), c_star_mc)
    rep.failures["replicates"] = len(batch.failures)
    p = cfg.params
    band = p.get("c_star_band", 0.25)
    rel = abs(c_hat_mean - c_star_mc) / c_star_mc
    rep.check("c_star_consistency", rel <= band, {"rel_err": rel, "c_star_mc": c_star_mc},
              f"|mean c_hat* - c*_MC| <= {band:g} c*_MC")
    bound = g_opt_mn + 3.0 * q + 3.0 * pooled
    rep.check("plugin_risk", g_plug_mean <= bound, g_plug_mean,
              f"<= G(c_opt theta_MN) + 3q + 3 pooled se = {bound:.6g}")
    floor_c = p.get("lower_bound_const", 0.25)
    floor = floor_c * (1.0 + sigma2) * cfg.n * f.r_n
    rep.check("split_lower_bound", g_ds_min >= floor, g_ds_min,
              f">= {floor_c:g} (1+sigma^2) n r(n) = {floor:.6g}")


def _run_unbiased(cfg: ExperimentConfig, rep: ScenarioReport, threads, fail_ids) -> None:
    p = cfg.params
    noise = cfg.noise_model()
    rows = []
    for ratio in p["dn_ratios"]:
        d = int(round(cfg.n * float(ratio)))
        s = make_block_spectrum(cfg.n, d, float(p["q"]))
        beta = make_beta_topk(s, int(p.get("k", cfg.n)))

        def task(lineage, s=s, beta=beta) -> tuple[float, ...]:
            sample = sample_design(s, cfg.n, noise, beta, lineage)
            theta = est.min_norm(sample, est.gram_factorize(sample))
            a, b = risk_moments(theta.coeffs, beta, s)
            au, bu = risk_moments(est.unbiased_attempt(theta, s, cfg.n).coeffs, beta, s)
            return a, b, au, bu

        batch = run_replicates(task, cfg.replicates, cfg.seed, "design", threads, fail_ids)
        arr = np.array(batch.results).reshape(-1, 4)
        sig = beta.signal(s)
        rs = RiskSummary.from_draws(arr[:, 0], arr[:, 1], sig, batch.failures)
        rs_u = RiskSummary.from_draws(arr[:, 2], arr[:, 3], sig, batch.failures)
        rows.append({"dn_ratio": float(ratio), "d": d, "G_mn": rs.g(1.0), "G_mn_se": rs.g_se(1.0),
                     "G_unbiased": rs_u.g(1.0), "G_unbiased_se": rs_u.g_se(1.0),
                     "failures": len(batch.failures)})
    rep.results["points"] = rows
    rep.failures["replicates"] = sum(r["failures"] for r in rows)
    g = [r["G_unbiased"] for r in rows]
    rep.check("strictly_increasing", all(b > a for a, b in zip(g, g[1:])), g,
              "G(unbiased_attempt) strictly increasing in d/n")
    factor = p.get("blowup_factor", 10.0)
    last = rows[-1]
    rep.check("blowup", last["G_unbiased"] >= factor * last["G_mn"],
              {"G_unbiased": last["G_unbiased"], "G_mn": last["G_mn"]},
              f"G(unbiased) >= {factor:g} G(theta_MN) at the largest d/n")


def _run_direction_shrink(cfg: ExperimentConfig, rep: ScenarioReport, threads,
                          fail_ids) -> None:
    p = cfg.params
    q, c = float(p["q"]), float(p["c"])
    d = int(round(cfg.n * float(p["dn_ratio"])))
    s = make_shrink_adversary_spectrum(cfg.n, d, q)
    raw = np.zeros(d)
    raw[0] = float(p.get("beta_sign", -1.0))
    beta = make_beta_custom(s, raw, normalize=True)
    v = np.zeros(d)
    v[0] = 1.0
    noise = NoiseModel.none()

    def task(lineage) -> float:
        sample = sample_design(s, cfg.n, noise, beta, lineage)
        theta = est.min_norm(sample, est.gram_factorize(sample))
        shrunk = est.shrink_toward(theta, v, c)
        diff = shrunk.coeffs - beta.coeffs
        return float(np.dot(s.eigenvalues, diff * diff))

    batch = run_replicates(task, cfg.replicates, cfg.seed, "design", threads, fail_ids)
    risks = np.array(batch.results)
    g_mean = float(risks.mean())
    g_se = float(risks.std(ddof=1) / math.sqrt(risks.size))
    floor = c**2 / 2.0 * q * d / cfg.n
    rep.results.update(G=g_mean, G_se=g_se, vSv=float(s.eigenvalues[0]), d=d)
    rep.failures["replicates"] = len(batch.failures)
    rep.check("blowup", g_mean >= floor, g_mean, f">= (c^2/2) q d/n = {floor:g}")


def _run_theory_check(cfg: ExperimentConfig, rep: ScenarioReport, threads, fail_ids) -> None:
    s = cfg.build_spectrum()
    beta = cfg.build_beta(s)
    noise = cfg.noise_model()
    n = cfg.n
    indices = cfg.params.get("indices") or [0, s.d // 2, s.d - 1]
    z = cfg.params.get("z", 3.0)
    slack = TheorySlack(cfg.slack["o1"], cfg.slack["c1"])
    pm = projection_moments_mc(s, beta, n, noise, indices, cfg.replicates, cfg.seed, threads)
    bounds = {"tr_inv": trace_inverse_bounds(s, n, 1, slack),
              "tr_inv2": trace_inverse_bounds(s, n, 2, slack),
              "proj_sigma_proj": proj_sigma_proj_bounds(s, beta, n, slack)}
    for i in indices:
        bounds[f"proj_diag_{i}"] = projection_diag_bounds(s, n, i, slack)
    if noise.homoscedastic:
        bounds["noise_term"] = noise_term_bounds(s, n, noise.sigma_max2, slack)
    rep.results["mc"] = pm.to_dict()
    rep.theory["bounds"] = {k: b.to_dict() for k, b in bounds.items()}
    for key, b in bounds.items():
        mean, se = pm.values[key]
        rep.check(f"contains.{key}", b.contains(mean, z * se), {"mean": mean, "se": se},
                  f"[{b.lower:.6g}, {b.upper:.6g}] widened by {z:g} se")
    rep.check("projector_trace", pm.max_trace_dev <= 1e-6, pm.max_trace_dev,
              "|tr(P_X) - n| <= 1e-6 in every draw")


def _run_moments(cfg: ExperimentConfig, rep: ScenarioReport, threads, fail_ids) -> None:
    p = cfg.params
    k, draws = int(p["dim"]), int(p["draws"])
    rng = replicate_stream(cfg.seed, 0, "moments").generator()
    mats = [rng.standard_normal((k, k)) for _ in range(3)]
    b, c, d3 = (0.5 * (m + m.T) for m in mats)
    chunk = 50_000
    q2_sum = q3_sum = q2_sq = q3_sq = 0.0
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        zz = rng.standard_normal((m, k))
        qb = np.einsum("ij,jk,ik->i", zz, b, zz)
        qc = np.einsum("ij,jk,ik->i", zz, c, zz)
        qd = np.einsum("ij,jk,ik->i", zz, d3, zz)
        p2, p3 = qb * qc, qb * qc * qd
        q2_sum += p2.sum()
        q2_sq += (p2 * p2).sum()
        q3_sum += p3.sum()
        q3_sq += (p3 * p3).sum()
        done += m
    z = p.get("z", 3.0)
    for name, s1, s2, exact in (("two_form", q2_sum, q2_sq, quadratic_form_moments(b, c)),
                                ("three_form", q3_sum, q3_sq,
                                 quadratic_form_moments(b, c, d3))):
        mean = s1 / draws
        se = math.sqrt(max(s2 / draws - mean**2, 0.0) * draws / (draws - 1) / draws)
        rep.results[name] = {"mc_mean": mean, "se": se, "closed_form": exact}
        rep.check(name, abs(mean - exact) <= z * se, {"mean": mean, "exact": exact, "se": se},
                  f"|MC - closed form| <= {z:g} se")


RUNNERS: dict[str, Callable[..., None]] = {
    "inflation": _run_inflation,
    "spiked": _run_spiked,
    "ridge_sweep": _run_ridge,
    "data_split": _run_data_split,
    "unbiased_divergence": _run_unbiased,
    "direction_shrink": _run_direction_shrink,
    "theory_check": _run_theory_check,
    "moments_check": _run_moments,
}


def run_scenario(cfg: ExperimentConfig, *, threads: int | None = None,
                 out_dir: str | Path | None = None, fail_ids: Iterable[int] = (),
                 dump_design: bool = False) -> ScenarioReport:
    """Run one scenario; write artifacts when ``out_dir`` (or ``cfg.out_dir``) is set."""
    cfg.validate()
    rep = ScenarioReport(config=cfg.to_dict())
    start = time.perf_counter()
    try:
        RUNNERS[cfg.scenario](cfg, rep, threads, tuple(fail_ids))
    except ConfigError:
        raise
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"scenario {cfg.scenario}: {exc}") from exc
    rep.timing["seconds"] = time.perf_counter() - start
    target = out_dir if out_dir is not None else cfg.out_dir
    if target is not None:
        path = rep.write(target)
        if dump_design and cfg.scenario in ("inflation", "ridge_sweep", "data_split",
                                            "theory_check"):
            s = cfg.build_spectrum()
            sample = sample_design(s, cfg.n, cfg.noise_model(), cfg.build_beta(s),
                                   replicate_stream(cfg.seed, 0, "design"))
            sample.to_csv(path / "design-0.csv")
    return rep

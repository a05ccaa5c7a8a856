"""Covariance spectra, their scalar functionals and assumption diagnostics.

The covariance is always represented by its eigenvalues; every design is
generated in the eigenbasis, so no eigenvector matrix is ever formed.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

NORMALIZATION_RTOL = 1e-12


@dataclass(frozen=True)
class Spectrum:
    """Descending positive eigenvalues of a covariance matrix."""

    eigenvalues: np.ndarray
    normalized: bool = False
    constructor: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("eigenvalues must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ValueError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be sorted non-increasing")
        if self.normalized and abs(lam.sum() - lam.size) / lam.size > NORMALIZATION_RTOL:
            raise ValueError("normalized spectrum must have trace equal to d")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def d(self) -> int:
        return self.eigenvalues.size

    @property
    def trace(self) -> float:
        return float(self.eigenvalues.sum())

    @property
    def top(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def is_isotropic(self) -> bool:
        lam = self.eigenvalues
        return bool(np.allclose(lam, lam[0], rtol=1e-12, atol=0.0))

    @classmethod
    def from_eigenvalues(cls, values, *, normalize: bool = False,
                         constructor: str = "custom", **params: Any) -> "Spectrum":
        """Sort ``values`` descending and optionally rescale them to trace d."""
        lam = np.sort(np.asarray(values, dtype=float))[::-1]
        if normalize:
            lam = _normalize_trace(lam)
        return cls(lam, normalized=normalize, constructor=constructor, params=dict(params))

    # -- serialization -------------------------------------------------
    def header(self, n: int | None = None) -> dict[str, Any]:
        return {
            "d": self.d,
            "n_context": n,
            "constructor": self.constructor,
            "parameters": _jsonable(self.params),
            "normalized": self.normalized,
        }

    def to_csv(self, path: str | Path, n: int | None = None) -> tuple[Path, Path]:
        """Write ``<path>`` (one eigenvalue column) and ``<path>.json`` header."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["eigenvalue"])
            for v in self.eigenvalues:
                writer.writerow([repr(float(v))])
        header_path = path.with_name(path.name + ".json")
        header_path.write_text(json.dumps(self.header(n), indent=2) + "\n", encoding="utf-8")
        return path, header_path

    @classmethod
    def from_csv(cls, path: str | Path) -> "Spectrum":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["eigenvalue"]:
            raise ValueError(f"{path}: missing 'eigenvalue' header")
        lam = np.array([float(r[0]) for r in rows[1:]])
        header_path = path.with_name(path.name + ".json")
        meta: dict[str, Any] = {}
        if header_path.exists():
            meta = json.loads(header_path.read_text(encoding="utf-8"))
            if meta.get("d") not in (None, lam.size):
                raise ValueError(f"{path}: header d={meta['d']} but {lam.size} rows")
        return cls(lam, normalized=bool(meta.get("normalized", False)),
                   constructor=meta.get("constructor", "custom"),
                   params=meta.get("parameters", {}))


def _normalize_trace(lam: np.ndarray) -> np.ndarray:
    out = lam * (lam.size / lam.sum())
    # one correction pass keeps the relative trace error at rounding level
    out *= lam.size / out.sum()
    return out


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def make_isotropic_spectrum(d: int) -> Spectrum:
    if d < 1:
        raise ValueError("d must be >= 1")
    return Spectrum(np.ones(d), normalized=True, constructor="isotropic", params={"d": d})


def make_block_spectrum(n: int, d: int, q: float) -> Spectrum:
    """Top block of ``n`` eigenvalues ``q d/n`` over a flat tail, trace ``d``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if d <= n:
        raise ValueError(f"block spectrum needs d > n (got n={n}, d={d})")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    top = q * d / n
    tail = d / (d - n) * (1.0 - q)
    if top <= tail:
        raise ValueError(
            f"block not separated: top value {top:g} <= tail value {tail:g}")
    lam = np.empty(d)
    lam[:n] = top
    lam[n:] = tail
    return Spectrum(_normalize_trace(lam), normalized=True, constructor="block",
                    params={"n": n, "d": d, "q": q})


def make_power_law_spectrum(n: int, d: int, a: float, q: float | None = None,
                            *, enforce: bool = False) -> Spectrum:
    """``lambda_i = kappa * i**-a`` with ``kappa`` fixing the trace at ``d``.

    ``q`` only scales the unnormalized profile, so it cancels; it is kept in
    the parameter record. With ``enforce`` the top eigenvalue must satisfy
    ``lambda_1 <= d / (8 n)``.
    """
    if d < 1 or n < 1:
        raise ValueError("n and d must be >= 1")
    if not 0.0 < a < 1.0:
        raise ValueError(f"decay exponent a must lie in (0, 1), got {a}")
    i = np.arange(1, d + 1, dtype=float)
    profile = i ** (-a)
    lam = _normalize_trace(profile)
    if enforce and lam[0] > d / (8.0 * n):
        raise ValueError(
            f"power law violates lambda_1 <= d/(8n): {lam[0]:g} > {d / (8.0 * n):g}")
    return Spectrum(lam, normalized=True, constructor="power_law",
                    params={"n": n, "d": d, "a": a, "q": q})


def make_two_regime_spectrum(n: int, d: int, q: float, a_min: float, a0: float,
                             a1: float, a2: float) -> Spectrum:
    """Head ``q(d/n)(a_min + i^-a0)`` for ``i <= n``, tail
    ``(d/n)^-a1 (i-n+1)^-a2`` beyond, both rescaled by one common factor."""
    if d <= n or n < 1:
        raise ValueError(f"two-regime spectrum needs d > n >= 1 (got n={n}, d={d})")
    if q <= 0 or a_min < 0 or a0 < 0 or a1 <= 0 or a2 <= 0:
        raise ValueError("two-regime parameters out of range")
    i_head = np.arange(1, n + 1, dtype=float)
    head = q * (d / n) * (a_min + i_head ** (-a0))
    i_tail = np.arange(n + 1, d + 1, dtype=float)
    tail = (d / n) ** (-a1) * (i_tail - n + 1) ** (-a2)
    if tail[0] > head[-1]:
        raise ValueError(
            f"non-monotone junction: tail starts at {tail[0]:g} above head end {head[-1]:g}")
    lam = _normalize_trace(np.concatenate([head, tail]))
    return Spectrum(lam, normalized=True, constructor="two_regime",
                    params={"n": n, "d": d, "q": q, "a_min": a_min, "a0": a0,
                            "a1": a1, "a2": a2})


def make_spiked_spectrum(d: int, spike: float, n: int | None = None) -> Spectrum:
    """Eigenvalues of ``I_d + v v^T`` with ``|v|^2 = spike`` (not normalized).

    With ``n`` given the spike must satisfy ``|v|^2 <= d / (10 n)``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if spike < 0:
        raise ValueError("spike must be >= 0")
    if n is not None and spike > d / (10.0 * n) * (1.0 + 1e-12):
        raise ValueError(f"spike {spike:g} exceeds d/(10n) = {d / (10.0 * n):g}")
    lam = np.ones(d)
    lam[0] += spike
    return Spectrum(lam, normalized=False, constructor="spiked",
                    params={"d": d, "spike": spike})


def make_shrink_adversary_spectrum(n: int, d: int, q: float) -> Spectrum:
    """One direction at ``q d/n`` over a flat level ``1 - 1/d - q/n``.

    This is the covariance used to show that shrinking toward a fixed
    nonzero direction can blow up the risk.
    """
    if d <= n or n < 1:
        raise ValueError("needs d > n >= 1")
    lam = np.full(d, 1.0 - 1.0 / d - q / n)
    lam[0] = q * d / n
    if lam[0] < lam[1]:
        raise ValueError("spike direction must dominate the flat level")
    return Spectrum(lam, normalized=False, constructor="shrink_adversary",
                    params={"n": n, "d": d, "q": q})


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumFunctionals:
    trace: float
    trace_sq: float
    r_n: float
    eff_rank: float
    eff_rank_sq: float
    rho: float
    n: int

    @property
    def q_cap(self) -> float:
        return self.rho


def functionals(s: Spectrum, n: int) -> SpectrumFunctionals:
    """Scalar summaries of ``s`` at sample size ``n``.

    ``r_n`` is ``tr(S^2) / tr(S)^2`` and ``rho`` is ``(n/d) lambda_1``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lam = s.eigenvalues
    tr = float(lam.sum())
    tr2 = float(np.dot(lam, lam))
    top = float(lam.max())
    r_n = tr2 / tr**2
    return SpectrumFunctionals(
        trace=tr,
        trace_sq=tr2,
        r_n=r_n,
        eff_rank=tr / top,
        eff_rank_sq=1.0 / r_n,
        rho=n / lam.size * top,
        n=n,
    )


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

class AssumptionSet(str, Enum):
    ADDITIVE = "additive"
    WEAK = "weak"
    STRONG = "strong"
    RATE_IMPROVEMENT = "rate_improvement"


@dataclass(frozen=True)
class Violation:
    clause: str
    measured: float
    required: str


@dataclass(frozen=True)
class AssumptionSlack:
    """Finite-n stand-ins for asymptotic clauses.

    ``c1_max`` / ``cnoise_max`` default to the values implied by the strong
    constants, which is what makes a strong pass imply a weak pass.
    """

    o1: float = 0.2
    card_factor: float = 2.0
    alpha_min: float = 0.5
    alpha_prime: float = 0.1
    alpha_noise: float = 1.0
    c1_max: float | None = None
    cnoise_max: float | None = None
    norm_tol: float = 1e-10

    @property
    def c1_bound(self) -> float:
        if self.c1_max is not None:
            return self.c1_max
        return 1.0 / (self.alpha_min * self.alpha_prime)

    @property
    def cnoise_bound(self) -> float:
        if self.cnoise_max is not None:
            return self.cnoise_max
        return self.alpha_noise / (self.alpha_min * self.alpha_prime) ** 2

    def record(self) -> dict[str, float]:
        return {
            "o1": self.o1,
            "card_factor": self.card_factor,
            "alpha_min": self.alpha_min,
            "alpha_prime": self.alpha_prime,
            "alpha_noise": self.alpha_noise,
            "c1_max": self.c1_bound,
            "cnoise_max": self.cnoise_bound,
            "norm_tol": self.norm_tol,
            "noise_functional_index": "n",
        }


@dataclass(frozen=True)
class AssumptionReport:
    assumption_set: AssumptionSet
    violations: tuple[Violation, ...]
    witnesses: dict[str, float]
    slack: dict[str, float]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {
            "assumption_set": self.assumption_set.value,
            "passed": self.passed,
            "violations": [
                {"clause": v.clause, "measured": v.measured, "required": v.required}
                for v in self.violations
            ],
            "witnesses": dict(self.witnesses),
            "slack": dict(self.slack),
        }


def _beta_moments(s: Spectrum, coeffs: np.ndarray) -> tuple[float, float, float]:
    lam = s.eigenvalues
    w = coeffs * coeffs
    return (float(np.dot(lam, w)), float(np.dot(lam**2, w)), float(np.dot(lam**3, w)))


def check_assumptions(s: Spectrum, beta, n: int, sigma2: float, sigma_max2: float,
                      which: AssumptionSet | str,
                      slack: AssumptionSlack | None = None) -> AssumptionReport:
    """Evaluate every finitely checkable clause of an assumption set.

    ``beta`` is a :class:`~inflatereg.sampling.BetaCoefficients` or a raw
    coefficient array in the eigenbasis of ``s``. ``sigma2`` is the noise
    functional (the noise variance for homoscedastic noise).
    """
    which = AssumptionSet(which)
    slack = slack or AssumptionSlack()
    coeffs = np.asarray(getattr(beta, "coeffs", beta), dtype=float)
    if coeffs.shape != (s.d,):
        raise ValueError(f"beta has {coeffs.size} coefficients, spectrum has d={s.d}")
    lam = s.eigenvalues
    d = s.d
    f = functionals(s, n)
    signal, b2, b3 = _beta_moments(s, coeffs)
    q = n / d * b2
    c1 = (n / d) ** 2 * b3 / q**2 if q > 0 else math.inf
    cnoise = (1.0 + sigma2) * n * f.r_n / q**2 if q > 0 else math.inf
    witnesses = {
        "q": q,
        "rho": f.rho,
        "r_n": f.r_n,
        "n_r_n": n * f.r_n,
        "signal": signal,
        "C1": c1,
        "C_noise": cnoise,
    }
    out: list[Violation] = []

    def need(ok: bool, clause: str, measured: float, required: str) -> None:
        if not ok:
            out.append(Violation(clause, float(measured), required))

    def normalization(prefix: str) -> None:
        need(abs(f.trace - d) / d <= NORMALIZATION_RTOL, f"{prefix}.1.trace",
             f.trace, f"tr = d = {d}")
        need(abs(signal - 1.0) <= slack.norm_tol, f"{prefix}.1.signal",
             signal, "beta' S beta = 1")

    def eigen_range(prefix: str) -> None:
        need(lam[0] <= d / (8.0 * n), f"{prefix}.2.top", lam[0], f"<= d/(8n) = {d / (8.0 * n):g}")
        floor = math.exp(-math.sqrt(n)) / d
        need(lam[-1] >= floor, f"{prefix}.2.min", lam[-1], f">= exp(-sqrt(n))/d = {floor:g}")

    if which is AssumptionSet.ADDITIVE:
        normalization("additive")
        eigen_range("additive")
        gap = q - (1.0 + sigma_max2) * n / d**2 * f.trace_sq
        witnesses["additive_gap"] = gap
        need(gap > 0, "additive.3", gap, "> 0")
    elif which is AssumptionSet.WEAK:
        _weak_clauses(need, normalization, eigen_range, witnesses, slack, q, c1, cnoise)
    elif which is AssumptionSet.STRONG:
        normalization("strong")
        q_max = n / d * lam[0]
        witnesses["q_max"] = q_max
        need(0 < q_max <= 0.125, "strong.2.top", q_max, "q_max in (0, 1/8]")
        floor = math.exp(-math.sqrt(n)) / d
        need(lam[-1] >= floor, "strong.2.min", lam[-1], f">= {floor:g}")
        scaled = n / d * lam
        in_k = (scaled >= slack.alpha_min * q_max) & (scaled <= q_max)
        card = int(in_k.sum())
        witnesses["card_K"] = card
        need(1 <= card <= slack.card_factor * n, "strong.3", card,
             f"1 <= card(K) <= {slack.card_factor:g} n")
        last = int(np.nonzero(in_k)[0].max()) if card else -1
        next_scaled = float(scaled[last + 1]) if 0 <= last < d - 1 else 0.0
        witnesses["next_scaled"] = next_scaled
        need(next_scaled <= slack.o1, "strong.4", next_scaled, f"<= o(1) slack {slack.o1:g}")
        mass = float(np.dot(lam[in_k], coeffs[in_k] ** 2))
        witnesses["K_mass"] = mass
        need(mass > slack.alpha_prime, "strong.5", mass, f"> alpha' = {slack.alpha_prime:g}")
        noise_eff = (1.0 + sigma2) * n * f.r_n
        need(noise_eff <= slack.alpha_noise * q_max**2, "strong.6", noise_eff,
             f"<= alpha_noise q_max^2 = {slack.alpha_noise * q_max**2:g}")
    else:
        _weak_clauses(need, normalization, eigen_range, witnesses, slack, q, c1, cnoise,
                      prefix="rate.1")
        need(c1 <= 1.0 + slack.o1, "rate.2", c1, f"C1 <= 1 + o(1) = {1.0 + slack.o1:g}")
        noise_eff = (1.0 + sigma2) * n * f.r_n
        need(noise_eff <= slack.o1, "rate.3", noise_eff, f"<= o(1) slack {slack.o1:g}")
        log_smax = math.log(sigma_max2) if sigma_max2 > 0 else -math.inf
        need(log_smax <= slack.o1 * n ** (1.0 / 3.0), "rate.4", log_smax,
             f"log sigma_max^2 <= {slack.o1:g} n^(1/3)")

    return AssumptionReport(which, tuple(out), witnesses, slack.record())


def _weak_clauses(need, normalization, eigen_range, witnesses, slack, q, c1, cnoise,
                  prefix: str = "weak") -> None:
    normalization(prefix)
    eigen_range(prefix)
    need(q > 0, f"{prefix}.3.q", q, "q > 0")
    need(c1 <= slack.c1_bound, f"{prefix}.3", c1, f"C1 <= {slack.c1_bound:g}")
    need(cnoise <= slack.cnoise_bound, f"{prefix}.4", cnoise,
         f"C_noise <= {slack.cnoise_bound:g}")

"""Gaussian designs, signal vectors and label noise in the eigenbasis.

Every random draw comes from a counter-based Philox stream keyed by
``(master seed, replicate id, purpose tag)``, so replicates can run in any
order or on any thread and still reproduce bit for bit.
"""
from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from .spectrum import Spectrum


@dataclass(frozen=True)
class BetaCoefficients:
    """Signal vector in the eigenbasis: ``coeffs[i] = beta' v_i``."""

    coeffs: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs, dtype=float).copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def d(self) -> int:
        return self.coeffs.size

    def signal(self, s: Spectrum) -> float:
        return float(np.dot(s.eigenvalues, self.coeffs**2))


def make_beta_topk(s: Spectrum, k: int) -> BetaCoefficients:
    """Equal weight on the ``k`` leading eigendirections, scaled so beta'S beta = 1."""
    if not 1 <= k <= s.d:
        raise ValueError(f"k must lie in [1, d={s.d}], got {k}")
    t = 1.0 / math.sqrt(float(s.eigenvalues[:k].sum()))
    c = np.zeros(s.d)
    c[:k] = t
    return BetaCoefficients(c, normalized=True)


def make_beta_custom(s: Spectrum, raw, normalize: bool = True) -> BetaCoefficients:
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (s.d,):
        raise ValueError(f"raw coefficients have shape {raw.shape}, expected ({s.d},)")
    if not normalize:
        return BetaCoefficients(raw, normalized=False)
    energy = float(np.dot(s.eigenvalues, raw**2))
    if energy == 0.0:
        raise ValueError("cannot normalize an all-zero coefficient vector")
    return BetaCoefficients(raw / math.sqrt(energy), normalized=True)


class NoiseKind(str, Enum):
    NONE = "none"
    GAUSSIAN = "gaussian"
    HETEROSCEDASTIC = "heteroscedastic"
    RADEMACHER = "rademacher"


@dataclass(frozen=True)
class NoiseModel:
    """Label noise with ``E[eps | x] = 0``.

    ``gaussian`` and ``rademacher`` have conditional variance ``sigma**2``.
    ``heteroscedastic`` draws Gaussian noise with conditional variance
    ``min(sigma**2 * |x|^2 / tr(S), sigma_max**2)``.
    """

    kind: NoiseKind = NoiseKind.NONE
    sigma: float = 0.0
    sigma_max: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.kind is NoiseKind.HETEROSCEDASTIC:
            if self.sigma_max is None or self.sigma_max <= 0:
                raise ValueError("heteroscedastic noise needs sigma_max > 0")

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(NoiseKind.NONE)

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseModel":
        return cls(NoiseKind.GAUSSIAN, sigma) if sigma > 0 else cls.none()

    @property
    def sigma_max2(self) -> float:
        if self.kind is NoiseKind.NONE:
            return 0.0
        if self.kind is NoiseKind.HETEROSCEDASTIC:
            return float(self.sigma_max) ** 2
        return self.sigma**2

    @property
    def homoscedastic(self) -> bool:
        return self.kind is not NoiseKind.HETEROSCEDASTIC

    def conditional_variance(self, x: np.ndarray, trace: float) -> np.ndarray:
        """``E[eps_i^2 | x_i]`` for each row of ``x``."""
        n = x.shape[0]
        if self.kind is NoiseKind.NONE:
            return np.zeros(n)
        if self.kind is NoiseKind.HETEROSCEDASTIC:
            sq = np.einsum("ij,ij->i", x, x)
            return np.minimum(self.sigma**2 * sq / trace, self.sigma_max2)
        return np.full(n, self.sigma**2)

    def draw(self, x: np.ndarray, trace: float, rng: np.random.Generator) -> np.ndarray:
        n = x.shape[0]
        if self.kind is NoiseKind.NONE:
            return np.zeros(n)
        if self.kind is NoiseKind.RADEMACHER:
            return self.sigma * (2.0 * rng.integers(0, 2, size=n) - 1.0)
        scale = np.sqrt(self.conditional_variance(x, trace))
        return scale * rng.standard_normal(n)

    def second_moment(self, s: Spectrum) -> float:
        """Unconditional ``E[eps^2]``.

        Exact for every kind on isotropic spectra. For heteroscedastic noise
        on anisotropic spectra ``|x|^2`` is replaced by the gamma law with
        the same mean and variance.
        """
        if self.kind is not NoiseKind.HETEROSCEDASTIC:
            return self.sigma_max2 if self.kind is not NoiseKind.NONE else 0.0
        lam = s.eigenvalues
        tr = float(lam.sum())
        if s.is_isotropic:
            shape, scale = s.d / 2.0, 2.0 * float(lam[0])
        else:
            tr2 = float(np.dot(lam, lam))
            shape, scale = tr**2 / (2.0 * tr2), 2.0 * tr2 / tr
        # E[min(a S, b)] = a E[S; S < t] + b P(S >= t), t = b / a
        a = self.sigma**2 / tr
        b = self.sigma_max2
        if a == 0.0:
            return 0.0
        t = b / a
        partial_mean = shape * scale * stats.gamma.cdf(t, shape + 1.0, scale=scale)
        return float(a * partial_mean + b * stats.gamma.sf(t, shape, scale=scale))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "sigma": self.sigma, "sigma_max": self.sigma_max}


def snr(beta: BetaCoefficients, s: Spectrum, noise: NoiseModel) -> float:
    """``beta' S beta / E[eps^2]``; ``inf`` when there is no noise."""
    m2 = noise.second_moment(s)
    if m2 == 0.0:
        return math.inf
    return beta.signal(s) / m2


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def purpose_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


@dataclass(frozen=True)
class SeedLineage:
    seed: int
    replicate_id: int
    purpose: str

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.replicate_id, purpose_key(self.purpose)))
        return np.random.Generator(np.random.Philox(ss))


def replicate_stream(seed: int, replicate_id: int, purpose: str = "design") -> SeedLineage:
    if seed < 0 or replicate_id < 0:
        raise ValueError("seed and replicate_id must be non-negative")
    return SeedLineage(int(seed), int(replicate_id), purpose)


# ---------------------------------------------------------------------------
# designs
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DesignSample:
    z: np.ndarray
    sqrt_lam: np.ndarray
    eps: np.ndarray
    y: np.ndarray
    replicate_id: int = 0
    seed_lineage: SeedLineage | None = None
    cond_var: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @cached_property
    def x(self) -> np.ndarray:
        x = self.z * self.sqrt_lam
        x.setflags(write=False)
        return x

    def rows(self, start: int, stop: int) -> "DesignSample":
        """Sub-sample of consecutive rows sharing this sample's randomness."""
        cv = None if self.cond_var is None else self.cond_var[start:stop]
        sub = DesignSample(self.z[start:stop], self.sqrt_lam, self.eps[start:stop],
                           self.y[start:stop], self.replicate_id, self.seed_lineage, cv)
        if "x" in self.__dict__:
            sub.__dict__["x"] = self.x[start:stop]
        return sub

    def with_labels(self, y: np.ndarray) -> "DesignSample":
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n,):
            raise ValueError("label vector has the wrong length")
        out = DesignSample(self.z, self.sqrt_lam, self.eps, y, self.replicate_id,
                           self.seed_lineage, self.cond_var)
        if "x" in self.__dict__:
            out.__dict__["x"] = self.x
        return out

    def to_csv(self, path: str | Path) -> Path:
        """Columns ``x0..x{d-1}, eps, y``; one row per sample."""
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow([f"x{j}" for j in range(self.d)] + ["eps", "y"])
            for i in range(self.n):
                writer.writerow([repr(float(v)) for v in self.x[i]]
                                + [repr(float(self.eps[i])), repr(float(self.y[i]))])
        return path


def sample_design(s: Spectrum, n: int, noise: NoiseModel, beta: BetaCoefficients,
                  stream: SeedLineage | np.random.Generator) -> DesignSample:
    """Draw ``n`` rows ``x_i ~ N(0, S)`` in the eigenbasis and their labels."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if beta.d != s.d:
        raise ValueError(f"beta has d={beta.d}, spectrum has d={s.d}")
    lineage = stream if isinstance(stream, SeedLineage) else None
    rng = stream.generator() if isinstance(stream, SeedLineage) else stream
    sqrt_lam = np.sqrt(s.eigenvalues)
    z = rng.standard_normal((n, s.d))
    x = z * sqrt_lam
    eps = noise.draw(x, s.trace, rng)
    y = x @ beta.coeffs + eps
    cond_var = noise.conditional_variance(x, s.trace)
    out = DesignSample(z, sqrt_lam, eps, y,
                       lineage.replicate_id if lineage else 0, lineage, cond_var)
    x.setflags(write=False)
    out.__dict__["x"] = x
    return out

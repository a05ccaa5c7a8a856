"""Interpolating, inflated, ridge and data-splitting estimators.

All solves go through the n x n Gram matrix ``X X'``; no d x d matrix and no
explicit pseudo-inverse is ever formed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import linalg

from .sampling import DesignSample
from .spectrum import Spectrum

log = logging.getLogger(__name__)

RIDGE_MARGIN = 0.05
JITTER_REL = 1e-12


@dataclass(frozen=True)
class Provenance:
    kind: str
    params: dict[str, Any] = field(default_factory=dict)
    base: "Provenance | None" = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "params": dict(self.params)}
        if self.base is not None:
            out["base"] = self.base.to_dict()
        return out


@dataclass(frozen=True, eq=False)
class EstimateVector:
    """Estimator output in eigenbasis coordinates."""

    coeffs: np.ndarray
    provenance: Provenance

    @property
    def d(self) -> int:
        return self.coeffs.size


@dataclass(frozen=True, eq=False)
class GramFactor:
    """Factorization of ``A = X X'``.

    The normal path is a Cholesky factor. When Cholesky fails or the
    smallest eigenvalue is below ``1e-12 tr(A)/n`` the factor falls back to
    an eigendecomposition of ``A + jitter I`` with ``jitter = 1e-12 tr(A)/n``.
    """

    gram: np.ndarray
    factor: Any
    min_eig: float
    fallback: bool = False
    jitter: float = 0.0

    @property
    def n(self) -> int:
        return self.gram.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.fallback:
            w, u = self.factor
            return u @ ((u.T @ b) / (w if b.ndim == 1 else w[:, None]))
        return linalg.cho_solve(self.factor, b)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))


def _factor_gram(gram: np.ndarray) -> GramFactor:
    n = gram.shape[0]
    eig = linalg.eigvalsh(gram)
    min_eig = float(eig[0])
    scale = float(np.trace(gram)) / n
    if min_eig > JITTER_REL * scale:
        try:
            return GramFactor(gram, linalg.cho_factor(gram, lower=True), min_eig)
        except linalg.LinAlgError:
            pass
    jitter = JITTER_REL * scale
    log.warning("Gram matrix near-singular (min eigenvalue %.3g); using eigendecomposition "
                "with jitter %.3g", min_eig, jitter)
    w, u = linalg.eigh(gram)
    w = np.maximum(w, 0.0) + jitter
    return GramFactor(gram, (w, u), min_eig, fallback=True, jitter=jitter)


def gram_factorize(sample: DesignSample) -> GramFactor:
    """Factor the Gram matrix of ``sample``.

    Square designs (``n = d``) are accepted since their Gram matrix is still
    almost surely positive definite.
    """
    if sample.n < 1:
        raise ValueError("n must be >= 1")
    if sample.n > sample.d:
        raise ValueError(f"Gram matrix is singular for n={sample.n} > d={sample.d}")
    x = sample.x
    gram = x @ x.T
    gram = 0.5 * (gram + gram.T)
    return _factor_gram(gram)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def min_norm(sample: DesignSample, gf: GramFactor, y: np.ndarray | None = None) -> EstimateVector:
    """``X' (X X')^{-1} y``; ``y`` defaults to the sample's labels."""
    y = sample.y if y is None else np.asarray(y, dtype=float)
    theta = sample.x.T @ gf.solve(y)
    params = {"fallback": True, "jitter": gf.jitter} if gf.fallback else {}
    return EstimateVector(theta, Provenance("min_norm", params))


def inflate(theta: EstimateVector, c: float) -> EstimateVector:
    return EstimateVector(c * theta.coeffs, Provenance("inflated", {"c": c}, theta.provenance))


def ridge(sample: DesignSample, gf: GramFactor, lam: float,
          margin: float = RIDGE_MARGIN) -> EstimateVector:
    """``X' (X X' + lam I)^{-1} Y``; negative ``lam`` down to ``-(1 - margin) min_eig``."""
    floor = -(1.0 - margin) * gf.min_eig
    if lam <= floor:
        raise ValueError(
            f"ridge penalty {lam:g} is at or below -(1-m)*min_eig = {floor:g} "
            f"(min_eig = {gf.min_eig:g}, m = {margin:g})")
    if lam == 0.0:
        w = gf.solve(sample.y)
    else:
        shifted = gf.gram + lam * np.eye(gf.n)
        w = linalg.solve(shifted, sample.y, assume_a="pos")
    return EstimateVector(sample.x.T @ w, Provenance("ridge", {"lambda": lam}))


def split_sizes(n: int, n_splits: int) -> list[int]:
    """Blocks of ``n // N`` with the remainder added to the last block."""
    if n_splits < 2:
        raise ValueError("data splitting needs N >= 2")
    base = n // n_splits
    if base == 0:
        raise ValueError(f"block size 0: n={n} is smaller than N={n_splits}")
    sizes = [base] * n_splits
    sizes[-1] += n - base * n_splits
    return sizes


def default_splits(n: int) -> int:
    return max(2, math.ceil(math.sqrt(n)))


@dataclass(frozen=True, eq=False)
class DataSplit:
    theta: EstimateVector
    holdout: DesignSample
    block_sizes: tuple[int, ...]
    fallbacks: int = 0


def data_split(sample: DesignSample, n_splits: int | None = None) -> DataSplit:
    """Sum of min-norm interpolators over blocks ``1..N-1``; block ``N`` is held out."""
    n_splits = default_splits(sample.n) if n_splits is None else n_splits
    sizes = split_sizes(sample.n, n_splits)
    if max(sizes) >= sample.d:
        raise ValueError(f"block size {max(sizes)} must be < d={sample.d}")
    theta = np.zeros(sample.d)
    start = 0
    fallbacks = 0
    for size in sizes[:-1]:
        block = sample.rows(start, start + size)
        gf = gram_factorize(block)
        fallbacks += gf.fallback
        theta += min_norm(block, gf).coeffs
        start += size
    holdout = sample.rows(start, sample.n)
    prov = Provenance("data_split", {"N": n_splits})
    return DataSplit(EstimateVector(theta, prov), holdout, tuple(sizes), fallbacks)


def estimate_c_star(theta_ds: EstimateVector, holdout: DesignSample | tuple) -> float:
    """Plug-in ``q_hat / r_hat`` from held-out rows and labels."""
    if isinstance(holdout, DesignSample):
        x, y = holdout.x, holdout.y
    else:
        x, y = (np.asarray(v, dtype=float) for v in holdout)
    if x.shape[0] < 1:
        raise ValueError("holdout is empty")
    pred = x @ theta_ds.coeffs
    r_hat = float(np.mean(pred * pred))
    if r_hat == 0.0:
        raise ZeroDivisionError("r_hat = 0: estimator is orthogonal to every holdout row")
    return float(np.mean(pred * y)) / r_hat


def unbiased_attempt(theta: EstimateVector, s: Spectrum, n: int) -> EstimateVector:
    """Rescale coordinate ``i`` by ``(tr(S)/n) / lambda_i``."""
    scale = (s.trace / n) / s.eigenvalues
    return EstimateVector(scale * theta.coeffs,
                          Provenance("unbiased_attempt", {"n": n}, theta.provenance))


def shrink_toward(theta: EstimateVector, v: np.ndarray, c: float) -> EstimateVector:
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > 1e-10:
        raise ValueError(f"shrink direction must have unit norm, got {norm:g}")
    return EstimateVector((1.0 - c) * theta.coeffs + c * v,
                          Provenance("shrink_toward", {"c": c}, theta.provenance))


# ---------------------------------------------------------------------------
# projector helpers
# ---------------------------------------------------------------------------

def project(sample: DesignSample, gf: GramFactor, w: np.ndarray) -> np.ndarray:
    """Apply the row-space projector ``X' (X X')^{-1} X`` to ``w``."""
    return sample.x.T @ gf.solve(sample.x @ w)


def projector_trace(gf: GramFactor) -> float:
    """``tr(P_X)`` accumulated column by column as ``sum_i e_i' A^{-1} A e_i``."""
    return float(sum(gf.solve(gf.gram[:, i])[i] for i in range(gf.n)))


def projection_diag(sample: DesignSample, gf: GramFactor, idx) -> np.ndarray:
    """Diagonal entries ``e_j' P_X e_j`` for the eigen-indices ``idx``."""
    cols = sample.x[:, np.atleast_1d(idx)]
    return np.einsum("ij,ij->j", cols, gf.solve(cols))

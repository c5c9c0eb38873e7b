"""Probabilistic data association of gated map candidates.

Collapses an ambiguous candidate set into a single pseudo-measurement: a
weighted mean position and an associated covariance. Weights are Gaussian
likelihoods of each candidate under the predicted platform position,
computed in the log domain to survive large Mahalanobis distances.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CovarianceError, NoFixError
from .geomap import CandidateSet

__all__ = [
    "PdaResult",
    "FarCandidateWarning",
    "position_noise_cov",
    "candidate_weights",
    "pda_fuse",
]

# Condition number beyond which a measurement covariance gets re-regularized.
_COND_LIMIT = 1e12
# Natural log of the smallest positive subnormal double; below this a raw
# Gaussian density evaluates to exactly zero.
_LOG_TINY = -744.44


class FarCandidateWarning(RuntimeWarning):
    """All candidate likelihoods underflowed; weights fell back to uniform."""


@dataclass(frozen=True)
class PdaResult:
    """Fused pseudo-measurement produced from one candidate set."""

    fused_position: np.ndarray
    fused_cov: np.ndarray
    weights: np.ndarray
    n_candidates: int

    def __post_init__(self):
        object.__setattr__(self, "fused_position", np.asarray(self.fused_position, dtype=float))
        object.__setattr__(self, "fused_cov", np.asarray(self.fused_cov, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))


def position_noise_cov(sigma: float, grad, grad_floor: float = 1e-9) -> np.ndarray:
    """Isotropic position covariance implied by field noise on a map slope.

    First-order propagation: a field error of one sigma moves the matched
    position by ``sigma / |grad|`` meters along the slope. The gradient norm
    is floored so flat map patches yield a large but finite covariance.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not grad_floor > 0:
        raise ValueError("grad_floor must be positive")
    g = float(np.linalg.norm(np.asarray(grad, dtype=float)))
    scale = sigma / max(g, grad_floor)
    return (scale * scale) * np.eye(2)


def _regularize_cov(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    eigs = np.linalg.eigvalsh(cov)
    if eigs.min() <= 0 or eigs.max() / max(eigs.min(), 1e-300) > _COND_LIMIT:
        cov = cov + (1e-9 * np.trace(cov) / 2.0) * np.eye(cov.shape[0])
        eigs = np.linalg.eigvalsh(cov)
    if eigs.min() <= 0:
        raise CovarianceError(f"measurement covariance not positive definite (eigs {eigs})")
    return cov


def candidate_weights(candidates: CandidateSet, predicted_pos, meas_cov) -> np.ndarray:
    """Normalized association weights for each candidate.

    Weight i is proportional to ``N(z_i; predicted_pos, meas_cov)``. Should
    every raw density underflow to zero, the weights fall back to uniform and
    a :class:`FarCandidateWarning` is emitted.
    """
    n = len(candidates)
    if n == 0:
        raise NoFixError("cannot weight an empty candidate set")
    cov = _regularize_cov(np.asarray(meas_cov, dtype=float))
    pred = np.asarray(predicted_pos, dtype=float)

    diffs = candidates.locations - pred
    chol = np.linalg.cholesky(cov)
    white = np.linalg.solve(chol, diffs.T)
    maha2 = np.sum(white ** 2, axis=0)
    logw = -0.5 * maha2

    peak = logw.max()
    if not np.isfinite(peak) or peak < _LOG_TINY:
        warnings.warn(
            "all candidate likelihoods numerically zero; using uniform weights",
            FarCandidateWarning,
            stacklevel=2,
        )
        return np.full(n, 1.0 / n)
    w = np.exp(logw - peak)
    return w / w.sum()


def pda_fuse(
    candidates: CandidateSet,
    weights,
    per_candidate_cov,
    spread_cov: bool = False,
) -> PdaResult:
    """Collapse candidates into one pseudo-measurement.

    Position is the weighted mean of candidate locations; covariance is the
    weighted average of the per-candidate covariances. With ``spread_cov``
    the weighted scatter of the candidates about the mean is added, which
    guards against overconfident fixes when the window is multi-modal.
    """
    n = len(candidates)
    if n == 0:
        raise NoFixError("cannot fuse an empty candidate set")
    w = np.asarray(weights, dtype=float)
    covs = [np.asarray(c, dtype=float) for c in per_candidate_cov]
    if len(w) != n or len(covs) != n:
        raise ValueError("weights and per-candidate covariances must match the candidate count")
    total = w.sum()
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"weights must sum to 1, got {total}")

    locs = candidates.locations
    z_bar = w @ locs
    r_bar = sum(wi * ci for wi, ci in zip(w, covs)) / total
    if spread_cov:
        d = locs - z_bar
        r_bar = r_bar + (w[:, None] * d).T @ d
    r_bar = 0.5 * (r_bar + r_bar.T)
    return PdaResult(fused_position=z_bar, fused_cov=r_bar, weights=w, n_candidates=n)

"""Batch map-matching tracker: EM-iterated association and smoothing.

Works on a window of T measurement scans. Each iteration alternates an
association step, which collapses every scan's candidate set into a fused
pseudo-measurement around the current trajectory iterate, with an estimation
step that runs a forward Kalman filter and backward fixed-interval smoother
over those pseudo-measurements under a constant-velocity model.

The forward pass is anchored at the fixed batch prior every iteration; the
trajectory iterate feeds back only through the predicted positions used to
weight candidates. With a single candidate per scan the iteration is
therefore an ordinary Kalman filter plus smoother, independent of the
iteration count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .assoc import PdaResult, candidate_weights, pda_fuse, position_noise_cov
from .errors import NoFixError, NumericalError
from .geomap import CandidateSet

__all__ = [
    "KinematicState",
    "KinematicModel",
    "BatchProblem",
    "BatchEstimate",
    "PositionFix",
    "cv_model",
    "em_step",
    "run_batch",
    "retrodict",
]

DEFAULT_MAX_ITERS = 15
DEFAULT_EPSILON = 0.1


@dataclass(frozen=True)
class KinematicState:
    """Planar position/velocity state [pE, pN, vE, vN] with covariance."""

    x: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[2:4]


@dataclass(frozen=True)
class KinematicModel:
    """Constant-velocity transition/observation matrices for one scan step."""

    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    dt: float


def cv_model(dt: float, q_a: float = 0.01) -> KinematicModel:
    """Constant-velocity model with white-noise-acceleration process noise.

    ``q_a`` is the acceleration power spectral density in m^2/s^3; the
    discrete process noise is its exact integral over one step.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    q = np.zeros((4, 4))
    q3, q2, q1 = dt ** 3 / 3.0, dt ** 2 / 2.0, dt
    for p, v in ((0, 2), (1, 3)):
        q[p, p] = q_a * q3
        q[p, v] = q[v, p] = q_a * q2
        q[v, v] = q_a * q1
    h = np.zeros((2, 4))
    h[0, 0] = h[1, 1] = 1.0
    return KinematicModel(F=f, Q=q, H=h, dt=float(dt))


@dataclass(frozen=True)
class BatchProblem:
    """One batch of T scans with per-scan priors and a kinematic model."""

    priors: tuple[KinematicState, ...]
    scans: tuple[CandidateSet, ...]
    model: KinematicModel
    max_iters: int = DEFAULT_MAX_ITERS
    epsilon: float = DEFAULT_EPSILON
    start_time: float = 0.0
    grad_floor: float = 1e-9
    spread_cov: bool = False

    def __post_init__(self):
        object.__setattr__(self, "priors", tuple(self.priors))
        object.__setattr__(self, "scans", tuple(self.scans))
        if len(self.priors) < 2:
            raise ValueError("batch length must be at least 2")
        if len(self.priors) != len(self.scans):
            raise ValueError("priors and scans must have the same length")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    @property
    def batch_len(self) -> int:
        return len(self.scans)


@dataclass(frozen=True)
class BatchEstimate:
    """Smoothed batch trajectory plus iteration diagnostics."""

    states: tuple[KinematicState, ...]
    iterations_used: int
    converged: bool
    per_scan_fused: tuple[PdaResult | None, ...]
    final_residual: float
    times: np.ndarray
    cost_trace: np.ndarray
    skipped_scans: tuple[int, ...]


@dataclass(frozen=True)
class PositionFix:
    """Timestamped position fix extracted from a smoothed batch state."""

    time: float
    position: np.ndarray
    cov: np.ndarray


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _solve_spd(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve m @ x = rhs, regularizing with a trace-scaled jitter if singular."""
    try:
        return np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError:
        warnings.warn("singular covariance in batch recursion; regularized",
                      RuntimeWarning, stacklevel=2)
        jitter = max(np.trace(m), 1.0) * 1e-12
        return np.linalg.solve(m + jitter * np.eye(m.shape[0]), rhs)


def em_step(
    problem: BatchProblem,
    current: list[KinematicState] | tuple[KinematicState, ...],
    prev_fused: list[PdaResult | None] | None = None,
) -> tuple[list[KinematicState], list[PdaResult | None]]:
    """One association + smoothing iteration.

    ``current`` is the trajectory iterate used to predict per-scan positions;
    ``prev_fused`` supplies the previous iteration's fused covariances for
    candidate weighting (on the first iteration the candidate-averaged
    position-noise covariance is used instead). Returns the new smoothed
    trajectory and this iteration's fused pseudo-measurements (``None`` for
    scans whose candidate set is empty).
    """
    t_len = problem.batch_len
    if len(current) != t_len:
        raise ValueError("current iterate length must equal the batch length")
    f, q, h = problem.model.F, problem.model.Q, problem.model.H

    fused: list[PdaResult | None] = [None] * t_len
    for t in range(t_len):
        cs = problem.scans[t]
        if len(cs) == 0:
            continue
        pred_x = problem.priors[0].x if t == 0 else f @ current[t - 1].x
        pred_pos = h @ pred_x
        per_cand = [position_noise_cov(cs.sigma, c.grad, problem.grad_floor) for c in cs]
        if prev_fused is not None and prev_fused[t] is not None:
            meas_cov = prev_fused[t].fused_cov
        else:
            meas_cov = sum(per_cand) / len(per_cand)
        w = candidate_weights(cs, pred_pos, meas_cov)
        fused[t] = pda_fuse(cs, w, per_cand, spread_cov=problem.spread_cov)

    # Forward filter, anchored at the batch prior. The scan-1 pseudo-
    # measurement is not consumed here: the prior already plays the role of
    # the time-1 posterior.
    y = problem.priors[0].x.copy()
    p = _symmetrize(problem.priors[0].cov.copy())
    ys = [y]
    ps = [p]
    p_preds: list[np.ndarray] = []
    for t in range(t_len - 1):
        p_pred = _symmetrize(f @ ps[t] @ f.T + q)
        y_pred = f @ ys[t]
        zt = fused[t + 1]
        if zt is None:
            ys.append(y_pred)
            ps.append(p_pred)
        else:
            s_mat = h @ p_pred @ h.T + zt.fused_cov
            k = _solve_spd(s_mat, h @ p_pred).T
            ps.append(_symmetrize(p_pred - k @ h @ p_pred))
            ys.append(y_pred + k @ (zt.fused_position - h @ y_pred))
        p_preds.append(p_pred)

    # Backward smoothing with the standard fixed-interval gain.
    xs: list[np.ndarray] = [np.zeros(4)] * t_len
    covs: list[np.ndarray] = [np.zeros((4, 4))] * t_len
    xs[t_len - 1] = ys[t_len - 1]
    covs[t_len - 1] = ps[t_len - 1]
    for t in range(t_len - 2, -1, -1):
        p_pred = p_preds[t]
        g = _solve_spd(p_pred, f @ ps[t].T).T
        xs[t] = ys[t] + g @ (xs[t + 1] - f @ ys[t])
        covs[t] = _symmetrize(ps[t] + g @ (covs[t + 1] - p_pred) @ g.T)

    states = [KinematicState(x=xs[t], cov=covs[t]) for t in range(t_len)]
    return states, fused


def _weighted_fit_cost(problem: BatchProblem, states, fused) -> float:
    """Weighted squared Mahalanobis cost of the candidates per scan.

    Candidates are measured against the same one-step predicted positions
    the association weights were computed from (``states`` is the iterate
    that fed the E-step), with each scan's fused covariance as the metric.
    """
    f, h = problem.model.F, problem.model.H
    total = 0.0
    for t, zt in enumerate(fused):
        if zt is None:
            continue
        pred_x = problem.priors[0].x if t == 0 else f @ states[t - 1].x
        diffs = problem.scans[t].locations - h @ pred_x
        sinv = np.linalg.inv(zt.fused_cov)
        maha2 = np.einsum("ni,ij,nj->n", diffs, sinv, diffs)
        total += float(zt.weights @ maha2)
    return total


def run_batch(problem: BatchProblem) -> BatchEstimate:
    """Iterate :func:`em_step` to convergence or the iteration budget.

    Convergence is measured as the maximum per-scan position displacement
    between consecutive iterates. Raises :class:`NoFixError` when every scan
    is empty and :class:`NumericalError` when an iterate goes non-finite.
    """
    t_len = problem.batch_len
    skipped = tuple(t for t in range(t_len) if len(problem.scans[t]) == 0)
    if len(skipped) == t_len:
        raise NoFixError("every scan in the batch is empty")

    current: list[KinematicState] = list(problem.priors)
    fused: list[PdaResult | None] | None = None
    costs: list[float] = []
    residual = np.inf
    converged = False
    iterations = 0
    for i in range(1, problem.max_iters + 1):
        new_states, fused = em_step(problem, current, fused)
        iterations = i
        for st in new_states:
            if not (np.isfinite(st.x).all() and np.isfinite(st.cov).all()):
                raise NumericalError("non-finite batch iterate", iteration=i)
        residual = max(
            float(np.linalg.norm(new_states[t].position - current[t].position))
            for t in range(t_len)
        )
        costs.append(_weighted_fit_cost(problem, current, fused))
        current = new_states
        if residual <= problem.epsilon:
            converged = True
            break

    times = problem.start_time + np.arange(t_len) * problem.model.dt
    return BatchEstimate(
        states=tuple(current),
        iterations_used=iterations,
        converged=converged,
        per_scan_fused=tuple(fused),
        final_residual=residual,
        times=times,
        cost_trace=np.array(costs),
        skipped_scans=skipped,
    )


def retrodict(estimate: BatchEstimate) -> list[PositionFix]:
    """Expose every smoothed in-batch state as a timestamped position fix.

    Standard aiding consumes only the last fix; retrodiction consumes all of
    them, reducing the effective aiding interval to one scan period.
    """
    fixes = []
    for t, state in enumerate(estimate.states):
        fixes.append(PositionFix(
            time=float(estimate.times[t]),
            position=state.position.copy(),
            cov=state.cov[:2, :2].copy(),
        ))
    return fixes

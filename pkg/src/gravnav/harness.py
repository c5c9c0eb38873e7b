"""End-to-end scenarios: synthetic maps, single runs, Monte Carlo campaigns.

A run wires the full aiding loop together: dead reckoning at 1 Hz drives the
navigation belief, the field sensor samples the map every few seconds, each
sample is gated into a candidate set around the current belief, and every T
scans a batch is smoothed and fed back as position fixes. Campaigns fan runs
out over seeds and aggregate the error metrics; aggregation is keyed and
ordered by seed so reports are byte-stable for any worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import MapGenParams, ScenarioConfig, config_hash, serialize_config
from .errors import (
    ConfigError,
    CovarianceError,
    EmptyWindowError,
    NodataError,
    NoFixError,
    NumericalError,
    OutOfBoundsError,
)
from .fusion import AidingFix, FusionParams, NavBelief, apply_batch, ukf_predict
from .geomap import (
    CandidateSet,
    GridMap,
    feature_variability,
    load_grid,
    lookup_candidates,
    normalize_variability,
    search_window,
)
from .inertial import SENSOR_GRADES, SensorGrade, sample_gravimeter, simulate_ins, simulate_truth
from .pmht import BatchProblem, KinematicState, cv_model, run_batch

__all__ = [
    "AidingEpoch",
    "RunReport",
    "CampaignReport",
    "gen_synthetic_map",
    "geodetic_to_planar",
    "build_grid",
    "run_scenario",
    "detect_divergence",
    "run_campaign",
    "write_campaign_outputs",
    "write_run_csv",
]

INS_DT = 1.0  # dead-reckoning rate, samples per second

EARTH_RADIUS = 6371008.8  # mean Earth radius, meters


def geodetic_to_planar(lat_deg, lon_deg, origin_lat_deg: float,
                       origin_lon_deg: float) -> np.ndarray:
    """Equirectangular projection of geodetic waypoints to local East-North.

    Good to well under a percent over the few-hundred-km legs this tool
    simulates; real-map runs use it to place geodetic waypoints on a planar
    grid. Accepts scalars or arrays; returns (..., 2) East/North meters.
    """
    lat = np.radians(np.asarray(lat_deg, dtype=float))
    lon = np.radians(np.asarray(lon_deg, dtype=float))
    lat0 = math.radians(origin_lat_deg)
    lon0 = math.radians(origin_lon_deg)
    east = EARTH_RADIUS * math.cos(lat0) * (lon - lon0)
    north = EARTH_RADIUS * (lat - lat0)
    return np.stack([east, north], axis=-1)


def gen_synthetic_map(params: MapGenParams) -> GridMap:
    """Deterministic synthetic field: background + Gaussian bumps + noise.

    The noise term is white noise smoothed over ``noise_corr_cells`` cells
    and rescaled to unit standard deviation before multiplying by
    ``noise_scale``, so the scale parameter reads directly as a field sigma.
    """
    if params.rows < 2 or params.cols < 2:
        raise ConfigError("synthetic map needs at least 2x2 cells")
    if params.cell_size <= 0:
        raise ConfigError("cell_size must be positive")
    h = params.cell_size
    xs = params.origin_x + (np.arange(params.cols) + 0.5) * h
    ys = params.origin_y + (params.rows - 1 - np.arange(params.rows) + 0.5) * h
    gx, gy = np.meshgrid(xs, ys, indexing="xy")

    values = np.full((params.rows, params.cols), float(params.background))
    for bump in params.bumps:
        if bump.width <= 0:
            raise ConfigError("bump width must be positive")
        r2 = (gx - bump.cx) ** 2 + (gy - bump.cy) ** 2
        values += bump.amplitude * np.exp(-r2 / (2.0 * bump.width ** 2))
    if params.noise_scale > 0:
        rng = np.random.default_rng(params.seed)
        noise = rng.standard_normal((params.rows, params.cols))
        noise = gaussian_filter(noise, sigma=params.noise_corr_cells, mode="reflect")
        std = noise.std()
        if std > 0:
            values += params.noise_scale * (noise / std)
    return GridMap(
        n_rows=params.rows,
        n_cols=params.cols,
        origin=np.array([params.origin_x, params.origin_y]),
        cell_size=h,
        values=values,
    )


def build_grid(cfg: ScenarioConfig) -> GridMap:
    """Materialize the configured map, from file or the generator."""
    if cfg.map.file is not None:
        return load_grid(cfg.map.file)
    if cfg.map.gen is None:
        raise ConfigError("config must set either map.file or synthetic map parameters")
    return gen_synthetic_map(cfg.map.gen)


@dataclass(frozen=True)
class AidingEpoch:
    """Diagnostics of one batch-aiding event."""

    time: float
    fixes: tuple[AidingFix, ...]
    n_accepted: int
    n_nis_rejected: int
    iterations_used: int
    converged: bool
    effective: bool


@dataclass(frozen=True)
class RunReport:
    """Per-second error series and aiding diagnostics of one run.

    ``positions`` is the reported navigation solution at each time step; in
    retrodiction mode the in-batch segment holds the replayed (smoothed)
    positions rather than the live dead-reckoned ones.
    """

    seed: int
    times: np.ndarray
    error_series: np.ndarray
    positions: np.ndarray
    aided_flags: np.ndarray
    epochs: tuple[AidingEpoch, ...]
    diverged: bool
    terminal_error: float
    failed: bool = False


@dataclass(frozen=True)
class CampaignReport:
    """Aggregated metrics of a seeded Monte Carlo campaign."""

    times: np.ndarray
    rms_series: np.ndarray
    n_live_runs: np.ndarray
    mean_error: float
    divergence_rate: float
    seeds: tuple[int, ...]
    reports: tuple[RunReport, ...]
    config_text: str
    config_digest: str


def _resolve_grades(cfg: ScenarioConfig) -> tuple[SensorGrade, SensorGrade]:
    try:
        ga = SENSOR_GRADES[cfg.ins.accel_grade]
    except KeyError:
        raise ConfigError(f"unknown accel grade {cfg.ins.accel_grade!r}") from None
    try:
        gg = SENSOR_GRADES[cfg.ins.gyro_grade]
    except KeyError:
        raise ConfigError(f"unknown gyro grade {cfg.ins.gyro_grade!r}") from None
    return ga, gg


def _resolve_fusion(cfg: ScenarioConfig, grade_accel: SensorGrade) -> FusionParams:
    fus = cfg.fusion
    if fus.q_accel is None:
        fus = replace(fus, q_accel=grade_accel.accel_noise_density ** 2)
    return fus


def _initial_belief(cfg: ScenarioConfig, truth, grade_accel: SensorGrade) -> NavBelief:
    bias_sigma = cfg.init.bias_sigma
    if bias_sigma is None:
        bias_sigma = grade_accel.accel_bias
    state = np.concatenate([truth.positions[0], truth.velocities[0], np.zeros(2)])
    cov = np.diag([
        cfg.init.pos_sigma ** 2, cfg.init.pos_sigma ** 2,
        cfg.init.vel_sigma ** 2, cfg.init.vel_sigma ** 2,
        bias_sigma ** 2, bias_sigma ** 2,
    ])
    return NavBelief(state=state, cov=cov, time=0.0)


def _empty_scan(measurement, prior_mean) -> CandidateSet:
    return CandidateSet((), measurement.value, measurement.sigma,
                        np.asarray(prior_mean, dtype=float), np.eye(2))


def run_scenario(cfg: ScenarioConfig, seed: int, grid: GridMap | None = None) -> RunReport:
    """Execute one seeded run of the configured scenario.

    Raises :class:`ConfigError` before any simulation when the trajectory
    leaves the map. A numerical failure inside the tracker marks the run
    failed/diverged and truncates the error series with NaNs rather than
    raising, so campaigns keep going.
    """
    cfg.validate()
    if grid is None:
        grid = build_grid(cfg)
    truth = simulate_truth(cfg.start, cfg.velocity, cfg.duration, INS_DT)
    xmin, xmax, ymin, ymax = grid.extent
    pos = truth.positions
    if not ((pos[:, 0] >= xmin) & (pos[:, 0] <= xmax)
            & (pos[:, 1] >= ymin) & (pos[:, 1] <= ymax)).all():
        raise ConfigError("trajectory leaves the map extent")

    grade_accel, grade_gyro = _resolve_grades(cfg)
    fus = _resolve_fusion(cfg, grade_accel)
    seed_ins, seed_grav = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    ins = simulate_ins(truth, grade_accel, grade_gyro, seed_ins)
    measurements = sample_gravimeter(grid, truth, cfg.gravimeter.interval,
                                     cfg.gravimeter.sigma, seed_grav)
    meas_at = {int(round(m.time / INS_DT)): m for m in measurements}
    accels = np.diff(ins.velocities, axis=0) / INS_DT

    model = cv_model(cfg.gravimeter.interval, cfg.pmht.q_a)
    belief = _initial_belief(cfg, truth, grade_accel)
    n = len(truth)
    pos_est = np.empty((n, 2))
    pos_est[0] = belief.position

    scans: list[tuple[int, CandidateSet]] = []
    checkpoint: tuple[NavBelief, int] | None = None
    var_history: list[float] = []
    epochs: list[AidingEpoch] = []
    first_accept_step: int | None = None
    failed = False

    def advance(bel: NavBelief, t_target: float) -> NavBelief:
        k0 = int(round(bel.time / INS_DT))
        k1 = int(round(t_target / INS_DT))
        for kk in range(k0, k1):
            bel = ukf_predict(bel, accels[kk], INS_DT, fus)
            pos_est[kk + 1] = bel.position
        return bel

    def close_batch(bel: NavBelief, step: int) -> NavBelief:
        ck_belief, _ck_step = checkpoint
        t_len = len(scans)
        x = ck_belief.state[:4].copy()
        p = ck_belief.cov[:4, :4].copy()
        priors = [KinematicState(x=x, cov=p)]
        for _ in range(t_len - 1):
            x = model.F @ x
            p = model.F @ p @ model.F.T + model.Q
            priors.append(KinematicState(x=x, cov=p))
        problem = BatchProblem(
            priors=tuple(priors),
            scans=tuple(cs for _, cs in scans),
            model=model,
            max_iters=cfg.pmht.max_iters,
            epsilon=cfg.pmht.epsilon,
            start_time=scans[0][0] * INS_DT,
            grad_floor=cfg.pmht.grad_floor,
            spread_cov=cfg.pmht.spread_cov,
        )
        try:
            est = run_batch(problem)
        except NoFixError:
            epochs.append(AidingEpoch(time=step * INS_DT, fixes=(), n_accepted=0,
                                      n_nis_rejected=0, iterations_used=0,
                                      converged=False, effective=False))
            return bel
        variabilities = []
        for st in est.states:
            try:
                raw = feature_variability(grid, grid.cell_of(st.position),
                                          fus.template_half_width)
            except (OutOfBoundsError, NodataError, ValueError):
                raw = 0.0
            var_history.append(raw)
            variabilities.append(normalize_variability(var_history, fus.window_len))
        if fus.mode == "retrodiction":
            result = apply_batch(ck_belief, est, "retrodiction", variabilities, fus,
                                 advance=advance)
            new_belief = result.belief
            end_time = step * INS_DT
            if new_belief.time < end_time - 1e-9:
                new_belief = advance(new_belief, end_time)
        else:
            result = apply_batch(bel, est, "standard", variabilities, fus)
            new_belief = result.belief
        epochs.append(AidingEpoch(
            time=step * INS_DT,
            fixes=result.fixes,
            n_accepted=result.n_accepted,
            n_nis_rejected=result.n_nis_rejected,
            iterations_used=est.iterations_used,
            converged=est.converged,
            effective=result.effective,
        ))
        return new_belief

    k = 1
    try:
        for k in range(1, n):
            belief = ukf_predict(belief, accels[k - 1], INS_DT, fus)
            pos_est[k] = belief.position
            meas = meas_at.get(k)
            if meas is None or not cfg.aiding:
                continue
            if not scans:
                checkpoint = (belief, k)
            try:
                window = search_window(belief.position, belief.cov[:2, :2],
                                       cfg.pmht.gamma)
                cs = lookup_candidates(grid, meas.value, meas.sigma, window,
                                       cfg.pmht.n_max, cfg.pmht.k_sig)
            except (EmptyWindowError, CovarianceError):
                cs = _empty_scan(meas, belief.position)
            scans.append((k, cs))
            if len(scans) == cfg.pmht.T:
                belief = close_batch(belief, k)
                pos_est[k] = belief.position
                if first_accept_step is None and epochs and epochs[-1].n_accepted > 0:
                    first_accept_step = k
                scans = []
                checkpoint = None
    except NumericalError:
        failed = True
        pos_est[k:] = np.nan

    errors = np.linalg.norm(pos_est - truth.positions, axis=1)
    times = truth.times[1:]
    series = errors[1:]
    aided = np.zeros(len(series), dtype=bool)
    if first_accept_step is not None:
        aided[first_accept_step - 1:] = True
    diverged = failed or detect_divergence(series, cfg.divergence.error_threshold_m,
                                           cfg.divergence.sustain_s, INS_DT)
    terminal = float(series[-1]) if np.isfinite(series[-1]) else float("inf")
    return RunReport(
        seed=int(seed),
        times=times,
        error_series=series,
        positions=pos_est[1:],
        aided_flags=aided,
        epochs=tuple(epochs),
        diverged=bool(diverged),
        terminal_error=terminal,
        failed=failed,
    )


def detect_divergence(series, threshold_m: float, sustain_s: float, dt: float = 1.0) -> bool:
    """True when the error exceeds the threshold continuously for sustain_s."""
    if threshold_m <= 0 or sustain_s <= 0:
        raise ValueError("divergence thresholds must be positive")
    need = max(int(math.ceil(sustain_s / dt)), 1)
    run = 0
    for v in np.asarray(series, dtype=float):
        run = run + 1 if v > threshold_m else 0
        if run >= need:
            return True
    return False


_WORKER_CFG: ScenarioConfig | None = None
_WORKER_GRID: GridMap | None = None


def _campaign_worker_init(cfg: ScenarioConfig) -> None:
    global _WORKER_CFG, _WORKER_GRID
    _WORKER_CFG = cfg
    _WORKER_GRID = build_grid(cfg)


def _campaign_worker(seed: int) -> RunReport:
    return run_scenario(_WORKER_CFG, seed, grid=_WORKER_GRID)


def aided_phase_start(cfg: ScenarioConfig) -> float:
    """Earliest time an aiding update can land: the first batch completion."""
    return cfg.pmht.T * cfg.gravimeter.interval


def run_campaign(cfg: ScenarioConfig, jobs: int = 1) -> CampaignReport:
    """Run ``monte_carlo.runs`` seeded scenarios and aggregate the metrics.

    Results are keyed and reduced in seed order, so the report is identical
    for any ``jobs`` value.
    """
    cfg.validate()
    seeds = [cfg.monte_carlo.base_seed + i for i in range(cfg.monte_carlo.runs)]
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_campaign_worker_init,
                                 initargs=(cfg,)) as pool:
            reports = list(pool.map(_campaign_worker, seeds))
    else:
        grid = build_grid(cfg)
        reports = [run_scenario(cfg, seed, grid=grid) for seed in seeds]

    err = np.vstack([r.error_series for r in reports])
    with np.errstate(invalid="ignore"):
        rms = np.sqrt(np.nanmean(err ** 2, axis=0))
    n_live = np.isfinite(err).sum(axis=0)
    times = reports[0].times

    if cfg.mean_error_window == "aided" and cfg.aiding:
        window_mask = times >= aided_phase_start(cfg)
        if not window_mask.any():
            window_mask = np.ones_like(times, dtype=bool)
    else:
        window_mask = np.ones_like(times, dtype=bool)
    counted = [r for r in reports
               if cfg.include_diverged or not r.diverged]
    pooled = [r.error_series[window_mask] for r in counted]
    pooled = [e[np.isfinite(e)] for e in pooled]
    pooled = [e for e in pooled if e.size]
    mean_error = float(np.mean(np.concatenate(pooled))) if pooled else float("nan")
    divergence_rate = sum(r.diverged for r in reports) / len(reports)

    return CampaignReport(
        times=times,
        rms_series=rms,
        n_live_runs=n_live,
        mean_error=mean_error,
        divergence_rate=float(divergence_rate),
        seeds=tuple(seeds),
        reports=tuple(reports),
        config_text=serialize_config(cfg),
        config_digest=config_hash(cfg),
    )


def _f17(x: float) -> str:
    return format(float(x), ".17g")


def write_run_csv(report: RunReport, path) -> None:
    """Per-run series: time_s, error_m, aided_flag."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time_s,error_m,aided_flag\n")
        for t, e, a in zip(report.times, report.error_series, report.aided_flags):
            fh.write(f"{_f17(t)},{_f17(e)},{int(a)}\n")


def write_campaign_outputs(report: CampaignReport, outdir) -> None:
    """Write campaign.csv, runs/<seed>.csv, and summary.csv under ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    runs_dir = os.path.join(outdir, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    with open(os.path.join(outdir, "campaign.csv"), "w", encoding="utf-8") as fh:
        fh.write("time_s,rms_error_m,n_live_runs\n")
        for t, r, nl in zip(report.times, report.rms_series, report.n_live_runs):
            fh.write(f"{_f17(t)},{_f17(r)},{int(nl)}\n")
    for run in report.reports:
        write_run_csv(run, os.path.join(runs_dir, f"{run.seed}.csv"))
    with open(os.path.join(outdir, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("mean_error_m,divergence_rate,config_hash\n")
        fh.write(f"{_f17(report.mean_error)},{_f17(report.divergence_rate)},"
                 f"{report.config_digest}\n")

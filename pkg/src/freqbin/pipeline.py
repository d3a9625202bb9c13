"""Synthetic-experiment pipeline behind the command-line tool."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .binspace import BinGrid, DensityMatrix, TwoPhotonState, check_indistinguishability, density_from_amplitudes, fidelity
from .config import ConfigError, ExperimentConfig
from .measurement import (
    CoincidenceRecord,
    FringeSeries,
    fit_visibility,
    fringe_scan,
    record_rng,
    simulate_counts,
    z_basis_table,
)
from .metrics import (
    MetricsReport,
    Target,
    get_target,
    mub_correlation,
    state_metrics,
    target_cglmp,
    witness_with_errors,
)
from .source import RingSpec, indistinguishability_matrix, lorentzian_jsa
from .tomography import (
    Povm,
    PovmSet,
    PsoOptions,
    ReconstructionResult,
    TomographyProblem,
    build_povms,
    pso_reconstruct,
    refit,
    settings_table,
)

Z_KEY = 1_000_000  # record-key namespace for Z-basis witness tables


def config_target(cfg: ExperimentConfig) -> Target:
    """Target named in the config, with an explicit pattern taking precedence."""
    src = cfg.source
    if src.pattern is not None:
        return Target("custom", tuple(int(v) for v in src.pattern))
    return get_target(src.target)


def config_dimension(cfg: ExperimentConfig) -> int:
    d = config_target(cfg).dimension
    if cfg.grid.dimension is not None and cfg.grid.dimension != d:
        raise ConfigError(f"grid.dimension: {cfg.grid.dimension} conflicts with the target span of {d} bins")
    return d


def ring_bins(dimension: int) -> list[int]:
    """Rings feeding computational bins ``0..D-1`` (the last ``D`` rings)."""
    return list(range(4 - dimension, 4))


def source_state(cfg: ExperimentConfig) -> tuple[TwoPhotonState, np.ndarray]:
    """Programmed amplitudes (after detuned rings drop out) and the overlap matrix."""
    target = config_target(cfg)
    d = config_dimension(cfg)
    rings = ring_bins(d)
    amps = target.signs.astype(complex).copy()
    for r in cfg.source.rings_off:
        if r in rings:
            amps[rings.index(r)] = 0.0
    if not np.any(amps):
        raise ConfigError("source.rings_off: every ring of the target is off")
    ind = cfg.source.indistinguishability
    if ind == "jsa":
        specs = [
            RingSpec(cfg.source.q_signal, cfg.source.q_idler, detuning_ghz=cfg.source.detunings_ghz[r]) for r in rings
        ]
        indist = indistinguishability_matrix([lorentzian_jsa(s) for s in specs])
    else:
        indist = np.full((d, d), float(ind), dtype=complex)
        np.fill_diagonal(indist, 1.0)
    return TwoPhotonState(amps), check_indistinguishability(indist, d)


def loss_table(cfg: ExperimentConfig, d: int) -> np.ndarray:
    if cfg.measurement.loss is None:
        return np.ones((d, d))
    loss = np.asarray(cfg.measurement.loss, dtype=float)
    if loss.shape != (d, d) or np.any(loss < 0) or np.any(loss > 1):
        raise ConfigError(f"measurement.loss: need a {d}x{d} table with entries in [0, 1]")
    return loss


@dataclass(frozen=True)
class Simulation:
    rho: DensityMatrix
    records: list[CoincidenceRecord]
    settings: list
    z_counts: np.ndarray
    seed: int | None


def simulate(cfg: ExperimentConfig) -> Simulation:
    d = config_dimension(cfg)
    state, indist = source_state(cfg)
    rho = density_from_amplitudes(state, indist)
    settings = settings_table(d)
    meas = cfg.measurement
    seed = None if meas.noiseless else cfg.seed_for("measurement")
    records = simulate_counts(rho, settings, d, meas.rate_hz, seed, loss_table(cfg, d), meas.integration_s)
    mean_z = z_basis_table(rho, d, meas.z_leakage) * meas.rate_hz * meas.integration_s
    if seed is None:
        z = np.rint(mean_z)
    else:
        z = np.array([[record_rng(seed, Z_KEY, m, n).poisson(mean_z[m, n]) for n in range(d)] for m in range(d)])
    return Simulation(rho, records, settings, z.astype(float), seed)


def tomography_options(cfg: ExperimentConfig) -> PsoOptions:
    t = cfg.tomography
    return PsoOptions(
        particles=t.particles,
        iterations=t.iterations,
        inertia=t.inertia,
        cognitive=t.cognitive,
        social=t.social,
        seed=cfg.seed_for("tomography"),
        cost_threshold=t.cost_threshold,
    )


def tomography_problem(records, d: int, cfg: ExperimentConfig, settings=None) -> TomographyProblem:
    settings = settings_table(d) if settings is None else settings
    bins = {r.m for r in records} | {r.n for r in records}
    if bins and max(bins) >= d:
        raise ConfigError(f"counts reference bin {max(bins)} but the dimension is {d}")
    known = {s.id for s in settings}
    unknown = sorted({r.setting_id for r in records} - known)
    if unknown:
        raise ConfigError(f"counts reference unknown setting ids: {', '.join(unknown)}")
    grid = BinGrid(d, spacing_ghz=cfg.grid.spacing_ghz, guard_bins=cfg.grid.guard_bins)
    povms = build_povms(settings, grid)
    return TomographyProblem(d, povms, records, loss_table(cfg, d), tomography_options(cfg))


def reconstruct_counts(records, d: int, cfg: ExperimentConfig, settings=None) -> tuple[TomographyProblem, ReconstructionResult]:
    problem = tomography_problem(records, d, cfg, settings)
    return problem, pso_reconstruct(problem)


def tomography_log(result: ReconstructionResult, truth: DensityMatrix | None = None, stride: int = 10) -> dict:
    log = {
        "seed": result.seed,
        "iterations": result.iterations,
        "converged": result.converged,
        "final_cost": result.cost,
        "rate": result.rate,
        "refined": result.refined,
        "cost_trace": result.cost_trace[::stride].tolist() + [float(result.cost_trace[-1])],
        "max_abs_residual": float(np.max(np.abs(result.residuals))),
    }
    if truth is not None:
        log["fidelity_root_vs_truth"] = fidelity(result.density, truth, "root")
    return log


def _resampled(problem: TomographyProblem, b: int, seed: int) -> TomographyProblem:
    """Poisson resample of every record around its observed count."""
    rng = record_rng(seed, Z_KEY + 1, b)  # records are canonically ordered, so one stream suffices
    new = [
        CoincidenceRecord(r.setting_id, r.m, r.n, int(rng.poisson(r.counts)), integration_s=r.integration_s)
        for r in problem.records
    ]
    return TomographyProblem(problem.dimension, _povms_of(problem), new, problem.loss, problem.options)


def _povms_of(problem: TomographyProblem) -> PovmSet:
    d = problem.dimension
    els = tuple(
        Povm(r.setting_id, r.m, r.n, row.conj().reshape(d * d, d * d)) for r, row in zip(problem.records, problem.matrix)
    )
    return PovmSet(d, els)


def metrics_report(
    rho: DensityMatrix,
    target: Target,
    z_counts=None,
    cglmp_mode: str = "optimized",
    resamples: int = 200,
    seed: int = 0,
    problem: TomographyProblem | None = None,
    rate: float | None = None,
) -> MetricsReport:
    """Metrics with Monte-Carlo error bars.

    The witness error comes from Poisson resampling of the Z-basis table.
    When the tomography data are supplied, state metrics are re-evaluated on
    warm-started refits of Poisson-resampled counts.
    """
    values = state_metrics(rho, target, cglmp_mode)
    errors: dict = {}
    if z_counts is not None:
        w, cert, w_err = witness_with_errors(z_counts, resamples, seed)
        values["witness"] = w
        values["certified_dimension"] = cert
        errors["witness"] = w_err if resamples > 1 else None
    if problem is not None and resamples > 1:
        if rate is None:
            raise ValueError("a fitted rate is needed to warm-start resampled refits")
        _, best = target_cglmp(rho, target, cglmp_mode)
        draws = {k: [] for k in values if k not in ("witness", "certified_dimension")}
        for b in range(resamples):
            rp = _resampled(problem, b, seed)
            rho_b, _, _ = refit(rp, rho, rate)
            vals = state_metrics(rho_b, target, cglmp_mode, cglmp_start=best, restarts=0)
            for k in draws:
                draws[k].append(vals[k])
        for k, v in draws.items():
            errors[k] = float(np.std(v, ddof=1))
    return MetricsReport(values, errors, seed, resamples)


@dataclass(frozen=True)
class FringeRun:
    spacing_ghz: float
    series: FringeSeries
    visibility: float
    stderr: float
    phase: float
    entangled: bool


def fringe_runs(cfg: ExperimentConfig, pair, points: int, half_spacing: bool, spacings=None) -> list[FringeRun]:
    """Fringe scans at each bin spacing; Poisson noise unless ``noiseless``."""
    d = config_dimension(cfg)
    state, indist = source_state(cfg)
    thetas = np.linspace(0.0, math.pi, points, endpoint=False)
    meas = cfg.measurement
    seed = None if meas.noiseless else cfg.seed_for("measurement")
    runs = []
    for idx, spacing in enumerate(spacings or cfg.fringe.spacings_ghz):
        grid = BinGrid(d, spacing_ghz=float(spacing), guard_bins=cfg.grid.guard_bins)
        series = fringe_scan(state, indist, tuple(pair), thetas, half_spacing, rate=meas.rate_hz, grid=grid)
        if seed is not None:
            mean = series.rates * meas.integration_s
            counts = [record_rng(seed, idx, pair[0], pair[1], i).poisson(mu) for i, mu in enumerate(mean)]
            series = FringeSeries(thetas, np.asarray(counts, dtype=float) / meas.integration_s, series.pair, half_spacing)
        fit = fit_visibility(series)
        runs.append(FringeRun(float(spacing), series, fit.visibility, fit.stderr, fit.phase, fit.entangled))
    return runs


def correlation_matrices(rho: DensityMatrix, target: Target):
    """``(C_e, C_t)`` when the target dimension supports MUB analysis."""
    if target.dimension not in (2, 3):
        return None
    return mub_correlation(rho, target.dimension, target.density())

"""Detection-chain forward model: outcome probabilities, counts, fringes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .binspace import (
    BinGrid,
    DensityMatrix,
    StateError,
    TwoPhotonState,
    check_indistinguishability,
    density_from_amplitudes,
)
from .source import CircuitProgram, amplitudes_from_circuit, default_crosstalk
from .eom import (
    BETA_STAR,
    IDLER_CALIBRATION,
    SIGNAL_CALIBRATION,
    ModulatorCalibration,
    ModulatorSetting,
    projector_family,
    sideband_coefficient,
)

ENTANGLEMENT_VISIBILITY = 1 / math.sqrt(2)


@dataclass(frozen=True)
class FilterSpec:
    """Box-shaped FBG reflection band around the selected bins."""

    signal_bin: int
    idler_bin: int
    half_bandwidth_ghz: float = 5.0

    def check(self, spacing_ghz: float) -> None:
        if not 2 * self.half_bandwidth_ghz < spacing_ghz:
            raise ValueError(
                f"filter bandwidth {2 * self.half_bandwidth_ghz} GHz does not resolve bins spaced {spacing_ghz} GHz"
            )


@dataclass(frozen=True)
class MeasurementSetting:
    id: str
    p_s_dbm: float
    theta_s: float
    p_i_dbm: float
    theta_i: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.p_s_dbm, self.theta_s, self.p_i_dbm, self.theta_i)):
            raise ValueError(f"setting {self.id} has non-finite values")

    def modulators(
        self,
        cal_s: ModulatorCalibration = SIGNAL_CALIBRATION,
        cal_i: ModulatorCalibration = IDLER_CALIBRATION,
        off_at_zero_dbm: bool = True,
    ) -> tuple[ModulatorSetting, ModulatorSetting]:
        return (
            ModulatorSetting(cal_s.index(self.p_s_dbm, off_at_zero_dbm), self.theta_s),
            ModulatorSetting(cal_i.index(self.p_i_dbm, off_at_zero_dbm), self.theta_i),
        )


@dataclass(frozen=True)
class CoincidenceRecord:
    setting_id: str
    m: int
    n: int
    counts: int
    expected: float = float("nan")
    integration_s: float = 1.0

    def __post_init__(self):
        if self.counts < 0:
            raise ValueError("counts must be non-negative")
        if not self.integration_s > 0:
            raise ValueError("integration time must be positive")


def _modulators(settings) -> tuple[ModulatorSetting, ModulatorSetting]:
    if isinstance(settings, MeasurementSetting):
        return settings.modulators()
    return tuple(settings)


def _order(site_out: int, site_in: int, step: int) -> int | None:
    diff = site_out - site_in
    if diff % step:
        return None
    return diff // step


def _step(setting: ModulatorSetting, grid: BinGrid) -> int:
    if grid.half_step:
        return 1 if setting.drive_multiple == 0.5 else 2
    return 1


def outcome_probability(
    state: TwoPhotonState,
    indist,
    settings: tuple[ModulatorSetting, ModulatorSetting],
    m: int,
    n: int,
    grid: BinGrid | None = None,
) -> float:
    """Coincidence probability at signal site ``m`` and idler site ``n``.

    Evaluated as the explicit double sum over source pairs ``(k, k')`` of
    ``alpha_k alpha_k'^* I_kk'`` times the product of sideband coefficients
    linking each source bin to the readout bins.
    """
    d = state.dimension
    if grid is None:
        grid = BinGrid(d)
    if grid.dimension != d:
        raise StateError(f"grid dimension {grid.dimension} does not match state dimension {d}")
    lo, hi = grid.window
    if not (lo <= m <= hi and lo <= n <= hi):
        raise ValueError(f"readout ({m}, {n}) lies outside the window [{lo}, {hi}]")
    indist = check_indistinguishability(indist, d)
    ms, mi = _modulators(settings)
    step_s, step_i = _step(ms, grid), _step(mi, grid)
    alpha = state.amplitudes

    # amplitude from source bin k to readout (m, n): conj(V^s_{k m} V^i_{k n})
    amp = np.zeros(d, dtype=complex)
    for k in range(d):
        site = grid.site(k)
        os_, oi = _order(m, site, step_s), _order(n, site, step_i)
        if os_ is None or oi is None or abs(os_) > 60 or abs(oi) > 60:
            continue
        v_s = sideband_coefficient(os_, ms.beta, ms.theta)
        v_i = sideband_coefficient(oi, mi.beta, mi.theta)
        amp[k] = np.conj(v_s * v_i)

    total = 0.0 + 0.0j
    for k in range(d):
        for kp in range(d):
            total += alpha[k] * np.conj(alpha[kp]) * indist[k, kp] * amp[k] * np.conj(amp[kp])
    return float(total.real)


def embed_in_window(rho, grid: BinGrid) -> np.ndarray:
    """Place a computational-space density matrix on the guarded joint window."""
    rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    d = grid.dimension
    sites = grid.window_sites
    w = sites.size
    comp = np.array([grid.site(k) for k in range(d)]) - sites[0]
    idx = (comp[:, None] * w + comp[None, :]).ravel()
    big = np.zeros((w * w, w * w), dtype=complex)
    big[np.ix_(idx, idx)] = rho
    return big


def window_probabilities(rho, settings, grid: BinGrid) -> np.ndarray:
    """All readout probabilities ``diag(U rho U^H)`` on the window, shaped ``[m, n]``."""
    ms, mi = _modulators(settings)
    family = projector_family(ms, mi, grid)
    big = embed_in_window(rho, grid)
    # columns of U outside the support of the embedded state contribute nothing
    support = np.flatnonzero(np.any(big != 0, axis=0))
    u = family.matrix[:, support]
    out = np.real(np.einsum("ij,jk,ik->i", u, big[np.ix_(support, support)], u.conj()))
    w = grid.window_sites.size
    return out.reshape(w, w)


def outcome_probability_matrix(rho, settings, m: int, n: int, grid: BinGrid) -> float:
    """``<mn| U rho U^H |mn>`` built from the full windowed joint transform."""
    probs = window_probabilities(rho, settings, grid)
    lo = grid.window[0]
    return float(probs[m - lo, n - lo])


def computational_transfer(settings, dimension: int) -> np.ndarray:
    """``<mn|U|kl>`` for ``m, n, k, l`` in ``0..D-1`` as a ``D^2 x D^2`` matrix."""
    settings = _modulators(settings)
    k = np.arange(dimension)
    diff = k[:, None] - k[None, :]  # out - in

    def arm(s):
        return np.array([[np.conj(sideband_coefficient(int(o), s.beta, s.theta)) for o in row] for row in diff])

    return np.kron(arm(settings[0]), arm(settings[1]))


def computational_probabilities(rho, settings, dimension: int) -> np.ndarray:
    """Readout probabilities on the computational bins, shaped ``[m, n]``."""
    rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    u = computational_transfer(settings, dimension)
    return np.real(np.einsum("ij,jk,ik->i", u, rho, u.conj())).reshape(dimension, dimension)


def expected_counts(p: float, rate: float, loss: float, time: float) -> float:
    """Mean coincidences ``R * L * p`` accumulated over ``time`` seconds."""
    if min(p, rate, time) < 0 or not 0 <= loss <= 1:
        raise ValueError("probability, rate and time must be >= 0 and loss in [0, 1]")
    return rate * loss * p * time


def record_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator keyed by the run seed and a record key."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in key]])
    return np.random.Generator(np.random.Philox(ss))


def sample_counts(expected: float, seed: int, key: tuple[int, ...] = ()) -> int:
    if expected < 0:
        raise ValueError("expected counts must be non-negative")
    if expected == 0:
        return 0
    return int(record_rng(seed, *key).poisson(expected))


def z_basis_table(rho, dimension: int, leakage: float = 0.0) -> np.ndarray:
    """Computational-basis coincidence probabilities with optional crosstalk.

    ``leakage`` moves that fraction of the diagonal probability uniformly onto
    the off-diagonal cells, a stand-in for filter and detector crosstalk.
    """
    rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    table = np.real(np.diag(rho)).reshape(dimension, dimension).copy()
    if leakage:
        if not 0 <= leakage <= 1:
            raise ValueError("leakage must lie in [0, 1]")
        diag = np.trace(table)
        off = ~np.eye(dimension, dtype=bool)
        table[np.eye(dimension, dtype=bool)] *= 1 - leakage
        table[off] += leakage * diag / off.sum()
    return table


@dataclass(frozen=True)
class FringeSeries:
    thetas: np.ndarray
    rates: np.ndarray
    pair: tuple[int, int] = (0, 1)
    half_spacing: bool = False


def fringe_scan(
    state: TwoPhotonState,
    indist,
    pair: tuple[int, int],
    thetas,
    half_spacing: bool = False,
    beta: float = BETA_STAR,
    rate: float = 1.0,
    grid: BinGrid | None = None,
) -> FringeSeries:
    """Two-photon interference fringe with ``theta_s = theta_i = theta``.

    In the standard mode both modulators run at the bin spacing and the
    readout sits on the lower bin of the pair.  With ``half_spacing`` the drive
    is halved, the grid is re-gridded to ``delta / 2`` and the readout is the
    midpoint between the two (adjacent) bins.  Each path then crosses two
    half-rate sidebands, so the half-rate drive phase is set to ``theta / 2``
    to keep ``theta`` referenced to the bin-spacing harmonic and the fringe in
    ``cos(2 theta)``.
    """
    j, k = sorted(pair)
    d = state.dimension
    if not (0 <= j < k < d):
        raise ValueError(f"pair {pair} is not a pair of distinct bins in 0..{d - 1}")
    if grid is None:
        grid = BinGrid(d)
    thetas = np.asarray(thetas, dtype=float)
    if half_spacing:
        if k - j != 1:
            raise ValueError("half-spacing fringes need adjacent bins")
        grid = grid.halved()
        drive, scale = 0.5, 0.5
        readout = grid.site(j) + 1
    else:
        drive, scale = 1.0, 1.0
        readout = grid.site(j)
    rates = np.array(
        [
            rate
            * outcome_probability(
                state,
                indist,
                (ModulatorSetting(beta, scale * th, drive), ModulatorSetting(beta, scale * th, drive)),
                readout,
                readout,
                grid,
            )
            for th in thetas
        ]
    )
    return FringeSeries(thetas, rates, (j, k), half_spacing)


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class VisibilityFit:
    visibility: float
    offset: float
    phase: float
    stderr: float
    amplitude: float = 0.0

    @property
    def entangled(self) -> bool:
        return self.visibility > ENTANGLEMENT_VISIBILITY


def fit_visibility(thetas, rates=None) -> VisibilityFit:
    """Least-squares fit of ``a + b cos(2 theta + phi)``; ``V = b / a``.

    Linear regression on ``(1, cos 2theta, sin 2theta)``; ``stderr`` propagates
    the residual covariance to ``V``.
    """
    if isinstance(thetas, FringeSeries):
        thetas, rates = thetas.thetas, thetas.rates
    th = np.asarray(thetas, dtype=float)
    y = np.asarray(rates, dtype=float)
    if th.size != y.size:
        raise FitError("theta and rate series differ in length")
    if th.size < 8:
        raise FitError(f"need at least 8 points, got {th.size}")
    if np.ptp(th) < math.pi * (1 - 1 / th.size) - 1e-12:
        raise FitError("scan must span at least one fringe period (pi in theta)")
    if np.ptp(y) == 0:
        raise FitError("degenerate series: rates have zero variance")
    x = np.column_stack([np.ones_like(th), np.cos(2 * th), np.sin(2 * th)])
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    a, c, s = coef
    if a <= 0:
        raise FitError("fitted offset is not positive")
    b = math.hypot(c, s)
    phase = math.atan2(-s, c)
    resid = y - x @ coef
    dof = max(th.size - 3, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(x.T @ x)
    if b > 0:
        grad = np.array([-b / a**2, c / (a * b), s / (a * b)])
    else:
        grad = np.array([0.0, 1 / a, 0.0])
    stderr = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    return VisibilityFit(b / a, a, phase, stderr, b)


def simulate_counts(
    rho,
    settings_list,
    dimension: int,
    rate: float,
    seed: int | None,
    loss=None,
    integration_s: float = 1.0,
    cal_s: ModulatorCalibration = SIGNAL_CALIBRATION,
    cal_i: ModulatorCalibration = IDLER_CALIBRATION,
) -> list[CoincidenceRecord]:
    """Coincidence records for every setting and computational bin pair.

    ``seed=None`` returns the noiseless expectation rounded to the nearest
    integer count; otherwise each record is a keyed Poisson draw.
    """
    loss = np.ones((dimension, dimension)) if loss is None else np.asarray(loss, dtype=float)
    records = []
    for idx, setting in enumerate(settings_list):
        probs = computational_probabilities(rho, setting.modulators(cal_s, cal_i), dimension)
        for m in range(dimension):
            for n in range(dimension):
                mean = expected_counts(max(probs[m, n], 0.0), rate, loss[m, n], integration_s)
                if seed is None:
                    c = int(round(mean))
                else:
                    c = sample_counts(mean, seed, (idx, m, n))
                records.append(CoincidenceRecord(setting.id, m, n, c, mean, integration_s))
    return records


class CalibrationError(RuntimeError):
    pass


def _wrap(x: float) -> float:
    return (x + math.pi) % (2 * math.pi) - math.pi


@dataclass
class PhaseCalibrationSimulator:
    """Chip stand-in for the heater alignment loop.

    Holds unknown static path offsets and heater crosstalk; the loop can only
    set heater phases and record two-ring fringes.
    """

    program: CircuitProgram = field(default_factory=CircuitProgram)
    crosstalk: np.ndarray = field(default_factory=default_crosstalk)
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(4))
    indist: float = 1.0
    points: int = 24
    rate: float = 1.0
    seed: int | None = None
    scans: int = 0

    def state(self, phases) -> TwoPhotonState:
        return amplitudes_from_circuit(self.program.with_phases(phases), self.crosstalk, self.offsets)

    def fringe(self, phases, pair: tuple[int, int]) -> FringeSeries:
        on = [k in pair for k in range(4)]
        prog = self.program.with_phases(phases).with_rings(on)
        state = amplitudes_from_circuit(prog, self.crosstalk, self.offsets)
        thetas = np.linspace(0, np.pi, self.points, endpoint=False)
        series = fringe_scan(state, np.full((4, 4), self.indist) + (1 - self.indist) * np.eye(4), pair, thetas, rate=self.rate)
        if self.seed is not None:
            key = self.scans
            rates = np.array(
                [sample_counts(r, self.seed, (key, pair[0], pair[1], i)) for i, r in enumerate(series.rates)], dtype=float
            )
            series = FringeSeries(series.thetas, rates, series.pair)
        self.scans += 1
        return series


@dataclass(frozen=True)
class CalibrationResult:
    phases: tuple[float, float, float]
    passes: int
    residuals: tuple[float, ...]  # worst residual fringe phase after each pass


def _sign_pairs(signs):
    signs = np.asarray(signs, dtype=float)
    if signs.size != 4:
        raise ValueError("target sign pattern must cover the four rings")
    on = np.flatnonzero(signs)
    if on.size < 2:
        raise ValueError("phase calibration needs at least two rings on")
    if np.any(np.diff(on) != 1):
        raise ValueError("rings that are on must be contiguous for adjacent-pair fringes")
    return [(int(a), int(b), 0.0 if signs[a] == signs[b] else math.pi) for a, b in zip(on[:-1], on[1:])]


def _pair_residuals(sim, phases, pairs):
    out = []
    for j, k, target in pairs:
        fit = fit_visibility(sim.fringe(phases, (j, k)))
        out.append(_wrap(target - fit.phase))
    return out


def calibrate_phases(
    signs,
    simulator: PhaseCalibrationSimulator,
    initial=(0.0, 0.0, 0.0),
    min_passes: int = 2,
    max_passes: int = 6,
    tol: float = 0.02,
) -> CalibrationResult:
    """Align adjacent-pair fringes to a target sign pattern.

    For each adjacent pair of rings that are on, the fitted fringe phase is the
    relative biphoton phase ``arg a_k - arg a_j``; the heater of the upper
    ring is moved by half the error (the pump phase is doubled).  Pairs are
    visited in order and the sweep is repeated to absorb thermal crosstalk.
    """
    pairs = _sign_pairs(signs)
    phases = np.asarray(initial, dtype=float).copy()
    history = []
    for n in range(1, max_passes + 1):
        for j, k, target in pairs:
            fit = fit_visibility(simulator.fringe(phases, (j, k)))
            phases[k - 1] += _wrap(target - fit.phase) / 2
        worst = max(abs(r) for r in _pair_residuals(simulator, phases, pairs))
        history.append(worst)
        if n >= min_passes and worst <= tol:
            return CalibrationResult(tuple(float(p) for p in phases), n, tuple(history))
    raise CalibrationError(
        f"phase calibration did not converge in {max_passes} passes; residual fringe phases per pass (rad): "
        + ", ".join(f"{r:.3g}" for r in history)
    )


def state_density(state: TwoPhotonState, indist=None) -> DensityMatrix:
    return density_from_amplitudes(state, indist)

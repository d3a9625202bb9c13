"""Multi-ring SFWM source: spectral overlaps, circuit programming, geometry."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .binspace import StateError, TwoPhotonState

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_RESONANCE_GHZ = 193_000.0
BRIGHTNESS_MHZ_PER_MW2 = 0.63
N_RINGS = 4


@dataclass(frozen=True)
class RingSpec:
    q_signal: float = 5.7e4
    q_idler: float = 7.8e4
    signal_ghz: float = DEFAULT_RESONANCE_GHZ
    idler_ghz: float = DEFAULT_RESONANCE_GHZ
    detuning_ghz: float = 0.0
    on: bool = True

    def __post_init__(self):
        if not (self.q_signal > 0 and self.q_idler > 0):
            raise ValueError("quality factors must be positive")


@dataclass(frozen=True)
class JointSpectralAmplitude:
    """Separable complex Lorentzian JSA, normalized on the whole plane.

    ``phi(W1, W2) = L(W1; gamma_s, c_s) L(W2; gamma_i, c_i)`` with
    ``L(W; g, c) = sqrt(g / 2pi) / (g/2 - i (W - c))``; ``g`` is the full
    width at half maximum of ``|L|^2`` in GHz.
    """

    gamma_s: float
    gamma_i: float
    center_s: float = 0.0
    center_i: float = 0.0

    @staticmethod
    def _line(w, g, c):
        return np.sqrt(g / (2 * np.pi)) / (g / 2 - 1j * (w - c))

    def signal(self, w):
        return self._line(np.asarray(w, dtype=float), self.gamma_s, self.center_s)

    def idler(self, w):
        return self._line(np.asarray(w, dtype=float), self.gamma_i, self.center_i)

    def __call__(self, w1, w2):
        return self.signal(w1) * self.idler(w2)

    def coverage(self, half_span: float) -> float:
        """Fraction of the norm inside ``[-half_span, half_span]^2``."""

        def frac(g, c):
            return (math.atan(2 * (half_span - c) / g) + math.atan(2 * (half_span + c) / g)) / math.pi

        return frac(self.gamma_s, self.center_s) * frac(self.gamma_i, self.center_i)


def lorentzian_jsa(ring: RingSpec) -> JointSpectralAmplitude:
    """JSA from loaded quality factors; detuning pulls signal up and idler down."""
    return JointSpectralAmplitude(
        ring.signal_ghz / ring.q_signal,
        ring.idler_ghz / ring.q_idler,
        ring.detuning_ghz,
        -ring.detuning_ghz,
    )


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor trapezoidal grid shared by both frequency axes.

    With ``half_span`` unset the real line is mapped to ``(-pi/2, pi/2]`` by
    ``W = scale * tan(u)``; Lorentzian integrands become smooth and periodic in
    ``u`` so the trapezoidal sum converges geometrically and covers all of the
    norm.  A finite ``half_span`` (GHz) gives a plain uniform grid instead.
    """

    scale: float
    points: int = 801
    half_span: float | None = None

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Abscissae and trapezoid weights (including the Jacobian)."""
        if self.points < 3:
            raise ValueError("need at least 3 quadrature points")
        if self.half_span is None:
            n = self.points - 1
            u = -np.pi / 2 + np.pi * (np.arange(n) + 0.5) / n
            return self.scale * np.tan(u), np.full(n, np.pi / n) * self.scale / np.cos(u) ** 2
        w = np.linspace(-self.half_span, self.half_span, self.points)
        h = w[1] - w[0]
        weights = np.full(self.points, h)
        weights[[0, -1]] = h / 2
        return w, weights


MIN_COVERAGE = 1 - 1e-3


def default_grid(*jsas: JointSpectralAmplitude, points: int = 801) -> QuadratureGrid:
    widths = [g for j in jsas for g in (j.gamma_s, j.gamma_i)]
    return QuadratureGrid(scale=0.5 * float(np.exp(np.mean(np.log(widths)))), points=points)


def indistinguishability(a: JointSpectralAmplitude, b: JointSpectralAmplitude, grid: QuadratureGrid | None = None) -> complex:
    """Overlap ``I_ab = iint phi_a phi_b^* dW1 dW2`` by 2D quadrature."""
    if grid is None:
        grid = default_grid(a, b)
    if grid.half_span is not None:
        cov = min(a.coverage(grid.half_span), b.coverage(grid.half_span))
        if cov < MIN_COVERAGE:
            raise ValueError(
                f"quadrature window +-{grid.half_span} GHz holds only {cov:.4f} of the JSA norm "
                f"(need >= {MIN_COVERAGE}); widen the window or use the mapped grid"
            )
    w, wt = grid.nodes()
    fa = a(w[:, None], w[None, :])
    fb = b(w[:, None], w[None, :])
    return complex(np.sum((fa * fb.conj()) * wt[:, None] * wt[None, :]))


def indistinguishability_matrix(jsas, grid: QuadratureGrid | None = None) -> np.ndarray:
    """Gram matrix of pairwise overlaps, with the diagonal pinned to one."""
    jsas = list(jsas)
    if grid is None:
        grid = default_grid(*jsas)
    n = len(jsas)
    m = np.eye(n, dtype=complex)
    for i in range(n):
        for k in range(i + 1, n):
            m[i, k] = indistinguishability(jsas[i], jsas[k], grid)
            m[k, i] = np.conj(m[i, k])
    return m


def detuning_for_indistinguishability(target: float, ring_a: RingSpec, ring_b: RingSpec, grid: QuadratureGrid | None = None) -> float:
    """Detuning (GHz) of ``ring_b`` at which ``|I_ab|`` drops to ``target``."""
    base = lorentzian_jsa(ring_a)

    def gap(det):
        rb = RingSpec(ring_b.q_signal, ring_b.q_idler, ring_b.signal_ghz, ring_b.idler_ghz, det, ring_b.on)
        return abs(indistinguishability(base, lorentzian_jsa(rb), grid)) - target

    top = gap(0.0)
    if top < 0:
        raise ValueError(f"|I| = {top + target:.4f} at zero detuning is already below {target}")
    hi = max(base.gamma_s, base.gamma_i)
    while gap(hi) > 0:
        hi *= 2
        if hi > 1e6:
            raise ValueError("no detuning reaches the requested indistinguishability")
    return brentq(gap, 0.0, hi, xtol=1e-10)


def default_crosstalk(n: int = 3, nearest: float = 0.05) -> np.ndarray:
    """Heater crosstalk: commanded phase ``j`` leaks ``nearest`` into neighbours."""
    c = np.eye(n)
    for k in range(n - 1):
        c[k, k + 1] = c[k + 1, k] = nearest
    return c


@dataclass(frozen=True)
class CircuitProgram:
    """Settings of the MZ splitter tree and phase shifters.

    MZ1 sends ``mz_splits[0]`` of the input to rings R0/R1, MZ2 splits that
    between R0 (``mz_splits[1]``) and R1, MZ3 splits the rest between R2
    (``mz_splits[2]``) and R3.  PS1-PS3 act on the paths of R1-R3; R0 is the
    phase reference.
    """

    input_power_mw: float = 4.0
    mz_splits: tuple[float, float, float] = (0.5, 0.5, 0.5)
    phases: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ring_on: tuple[bool, bool, bool, bool] = (True, True, True, True)
    efficiency: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.input_power_mw < 0:
            raise ValueError("pump power must be non-negative")
        if len(self.mz_splits) != 3 or any(not 0 <= f <= 1 for f in self.mz_splits):
            raise ValueError("MZ splitting fractions must be three values in [0, 1]")
        if len(self.phases) != 3 or len(self.ring_on) != N_RINGS or len(self.efficiency) != N_RINGS:
            raise ValueError("circuit program needs 3 phases, 4 ring flags and 4 efficiencies")
        if any(e < 0 for e in self.efficiency):
            raise ValueError("conversion efficiencies must be non-negative")

    @property
    def pump_powers(self) -> np.ndarray:
        f1, f2, f3 = self.mz_splits
        p = self.input_power_mw
        return np.array([p * f1 * f2, p * f1 * (1 - f2), p * (1 - f1) * f3, p * (1 - f1) * (1 - f3)])

    def with_phases(self, phases) -> CircuitProgram:
        return CircuitProgram(self.input_power_mw, self.mz_splits, tuple(float(x) for x in phases), self.ring_on, self.efficiency)

    def with_rings(self, ring_on) -> CircuitProgram:
        return CircuitProgram(self.input_power_mw, self.mz_splits, self.phases, tuple(bool(x) for x in ring_on), self.efficiency)


def path_phases(program: CircuitProgram, crosstalk=None, offsets=None) -> np.ndarray:
    """Optical phase on each ring's pump path after heater crosstalk."""
    ps = np.asarray(program.phases, dtype=float)
    if crosstalk is not None:
        ps = np.asarray(crosstalk, dtype=float) @ ps
    phase = np.concatenate([[0.0], ps])
    if offsets is not None:
        phase = phase + np.asarray(offsets, dtype=float)
    return phase


def amplitudes_from_circuit(program: CircuitProgram, crosstalk=None, offsets=None, bins=None) -> TwoPhotonState:
    """Biphoton amplitudes ``alpha_k ~ eta_k P_k exp(2 i phi_k)``.

    ``bins`` selects which rings populate computational bins ``0..D-1``
    (default: all four).  ``offsets`` are static path phases added before the
    doubling, e.g. unknown fabrication errors.
    """
    on = np.asarray(program.ring_on, dtype=bool)
    if not on.any():
        raise StateError("all rings are off; no photon pairs are generated")
    amp = np.asarray(program.efficiency) * program.pump_powers * np.exp(2j * path_phases(program, crosstalk, offsets))
    amp = np.where(on, amp, 0.0)
    if bins is not None:
        amp = amp[list(bins)]
    if not np.any(amp != 0):
        raise StateError("no selected ring is on and pumped")
    return TwoPhotonState(amp)


def program_for_signs(signs, bins=None, **kwargs) -> CircuitProgram:
    """Equal-power program whose output carries the requested ``+-1`` pattern.

    ``signs`` covers all four rings; zero entries switch a ring off.
    """
    signs = np.asarray(signs, dtype=float)
    if signs.size != N_RINGS:
        raise ValueError("sign pattern must cover the four rings")
    on = signs != 0
    rel = np.where(signs < 0, np.pi / 2, 0.0)
    if signs[0] < 0:
        rel = np.where(signs < 0, 0.0, np.pi / 2)
    return CircuitProgram(phases=tuple(rel[1:]), ring_on=tuple(on), **kwargs)


def brightness_ratio_single_ring(spacing_1_ghz: float, spacing_2_ghz: float) -> float:
    """Single-ring pair rate at FSR ``spacing_1`` relative to FSR ``spacing_2``."""
    if not (spacing_1_ghz > 0 and spacing_2_ghz > 0):
        raise ValueError("bin spacings must be positive")
    return (spacing_1_ghz / spacing_2_ghz) ** 2


def ring_radius_for_spacing(group_velocity: float, spacing_ghz: float) -> float:
    """Radius in micrometres of a ring whose FSR equals ``spacing_ghz``."""
    if not (group_velocity > 0 and spacing_ghz > 0):
        raise ValueError("group velocity and spacing must be positive")
    return group_velocity / (2 * math.pi * spacing_ghz * 1e9) * 1e6

"""Electro-optic phase modulator model.

A phase modulator driven at the bin spacing scatters a photon in bin ``k``
into bin ``k + n`` with amplitude ``J_n(beta)``.  ``SidebandMatrix.matrix``
stores the Heisenberg-picture coefficients ``V[m, r] = J_{r-m}(beta)
exp(i (r-m) theta)`` acting on annihilation operators; the single-photon
state transfer is its conjugate transpose (``SidebandMatrix.transfer``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bessel import MAX_ORDER, bessel_j, bessel_j_orders
from .binspace import BinGrid

DEFAULT_EPS_TRUNC = 1e-6


class TruncationError(ValueError):
    """The bin window is too narrow to hold the sideband spread."""


def sideband_coefficient(n: int, beta: float, theta: float) -> complex:
    """``J_n(beta) exp(i n theta)``."""
    if abs(n) > MAX_ORDER:
        raise ValueError(f"sideband order {n} exceeds |n| <= {MAX_ORDER}")
    if beta < 0:
        raise ValueError(f"modulation index must be >= 0, got {beta}")
    return bessel_j(n, beta) * complex(math.cos(n * theta), math.sin(n * theta))


def equal_sideband_index(tol: float = 1e-13) -> float:
    """Smallest positive ``beta`` with ``J_0(beta) = J_1(beta)``, by bisection on (1, 2)."""
    lo, hi = 1.0, 2.0

    def g(b):
        j = bessel_j_orders(1, b)
        return j[0] - j[1]

    g_lo = g(lo)
    if g_lo * g(hi) >= 0:
        raise RuntimeError("J0 - J1 does not change sign on (1, 2)")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        g_mid = g(mid)
        if g_mid == 0:
            return mid
        if (g_mid > 0) == (g_lo > 0):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


BETA_STAR = equal_sideband_index()
J_BAR = bessel_j(0, BETA_STAR)


@dataclass(frozen=True)
class ModulatorSetting:
    beta: float = 0.0
    theta: float = 0.0
    drive_multiple: float = 1.0

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError(f"modulation index must be >= 0, got {self.beta}")
        if self.drive_multiple not in (0.5, 1.0):
            raise ValueError(f"drive multiple must be 1/2 or 1, got {self.drive_multiple}")

    @property
    def is_off(self) -> bool:
        return self.beta == 0.0


OFF = ModulatorSetting()


@dataclass(frozen=True)
class ModulatorCalibration:
    """Linear map from RF voltage to modulation index, ``beta = kappa sqrt(P_mW)``."""

    efficiency: float
    anchor_power_dbm: float
    anchor_beta: float

    def __post_init__(self):
        if not self.efficiency > 0:
            raise ValueError("modulation efficiency must be positive")
        if abs(self.index(self.anchor_power_dbm, off_at_zero_dbm=False) - self.anchor_beta) > 1e-6:
            raise ValueError("calibration anchor is inconsistent with the efficiency")

    @classmethod
    def from_anchor(cls, power_dbm: float, beta: float) -> ModulatorCalibration:
        kappa = beta / math.sqrt(10 ** (power_dbm / 10))
        return cls(kappa, power_dbm, beta)

    def index(self, power_dbm: float, off_at_zero_dbm: bool = True) -> float:
        return rf_power_to_index(power_dbm, self, off_at_zero_dbm)


def rf_power_to_index(power_dbm: float, cal: ModulatorCalibration, off_at_zero_dbm: bool = True) -> float:
    """Modulation index for an RF drive power.

    A nominal 0 dBm setting means the modulator is switched off when
    ``off_at_zero_dbm`` is set (the tomography tables use it that way).
    """
    if not math.isfinite(power_dbm):
        raise ValueError("RF power must be finite")
    if off_at_zero_dbm and power_dbm == 0:
        return 0.0
    return cal.efficiency * math.sqrt(10 ** (power_dbm / 10))


SIGNAL_CALIBRATION = ModulatorCalibration.from_anchor(22.1, 1.434)
IDLER_CALIBRATION = ModulatorCalibration.from_anchor(24.3, 1.434)


def _lattice_step(setting: ModulatorSetting, grid: BinGrid) -> int:
    if grid.half_step:
        return 1 if setting.drive_multiple == 0.5 else 2
    if setting.drive_multiple == 0.5:
        raise ValueError("half-spacing drive needs a half-step grid (use BinGrid.halved())")
    return 1


def required_guard_bins(beta: float, eps_trunc: float = DEFAULT_EPS_TRUNC) -> int:
    """Smallest ``g`` with ``1 - sum_{|n|<=g} J_n(beta)^2 <= eps_trunc``."""
    j = bessel_j_orders(MAX_ORDER, beta)
    total = j[0] ** 2
    for g in range(1, MAX_ORDER + 1):
        total += 2 * j[g] ** 2
        if 1 - total <= eps_trunc:
            return g
    raise TruncationError(f"beta={beta} needs more than {MAX_ORDER} sideband orders")


@dataclass(frozen=True)
class SidebandMatrix:
    sites: np.ndarray
    matrix: np.ndarray
    residue: float

    @property
    def transfer(self) -> np.ndarray:
        """Single-photon amplitude ``<out|U|in>`` indexed ``[out, in]``."""
        return self.matrix.conj().T

    def index(self, site: int) -> int:
        return int(site - self.sites[0])


def sideband_matrix(setting: ModulatorSetting, grid: BinGrid, eps_trunc: float = DEFAULT_EPS_TRUNC) -> SidebandMatrix:
    """Circulant sideband matrix on the guarded window of ``grid``."""
    step = _lattice_step(setting, grid)
    sites = grid.window_sites
    offs = sites[np.newaxis, :] - sites[:, np.newaxis]  # r - m
    orders = offs // step
    valid = (offs % step == 0) & (np.abs(orders) <= MAX_ORDER)
    jn = bessel_j_orders(MAX_ORDER, setting.beta)
    a = np.abs(orders)
    parity = np.where((orders < 0) & (a % 2 == 1), -1.0, 1.0)
    vals = parity * jn[np.minimum(a, MAX_ORDER)] * np.exp(1j * orders * setting.theta)
    mat = np.where(valid, vals, 0.0)

    comp = np.arange(grid.sites) - sites[0]
    residue = float(np.max(1 - np.sum(np.abs(mat[comp]) ** 2, axis=1)))
    if residue > eps_trunc:
        need = required_guard_bins(setting.beta, eps_trunc)
        raise TruncationError(
            f"window with {grid.guard_bins} guard bins leaves truncation residue {residue:.2e} > {eps_trunc:.1e}; "
            f"beta={setting.beta:.4f} needs at least {need} guard bins"
        )
    return SidebandMatrix(sites, mat, max(residue, 0.0))


@dataclass(frozen=True)
class JointTransform:
    """``U = U_s (x) U_i`` on the guarded joint window; rows and columns are ``s * W + i``."""

    sites: np.ndarray
    matrix: np.ndarray

    def restricted(self, inputs: np.ndarray, outputs: np.ndarray) -> np.ndarray:
        w = self.sites.size
        lo = self.sites[0]
        inp = ((inputs[:, None] - lo) * w + (inputs[None, :] - lo)).ravel()
        out = ((outputs[:, None] - lo) * w + (outputs[None, :] - lo)).ravel()
        return self.matrix[np.ix_(out, inp)]


def projector_family(setting_s: ModulatorSetting, setting_i: ModulatorSetting, grid: BinGrid) -> JointTransform:
    vs = sideband_matrix(setting_s, grid)
    vi = sideband_matrix(setting_i, grid)
    return JointTransform(vs.sites, np.kron(vs.transfer, vi.transfer))


def analysis_vector(setting: ModulatorSetting, readout_bin: int, dimension: int) -> np.ndarray:
    """Unnormalized projector ``W^H |readout>`` restricted to bins ``0..D-1``."""
    k = np.arange(dimension)
    # conj(<readout|U|k>) = J_{readout-k} exp(i (readout-k) theta)
    return np.array([sideband_coefficient(readout_bin - kk, setting.beta, setting.theta) for kk in k])


@dataclass(frozen=True)
class MubBasis:
    name: str
    vectors: np.ndarray  # rows are the normalized basis vectors
    settings: tuple[ModulatorSetting, ...]
    readout_bins: tuple[int, ...]

    def conjugate_setting(self, j: int) -> ModulatorSetting:
        """Setting realizing the complex-conjugated vector on the other arm."""
        s = self.settings[j]
        return ModulatorSetting(s.beta, -s.theta, s.drive_multiple)


def _realized_basis(name, dimension, thetas, readout):
    settings = tuple(ModulatorSetting(BETA_STAR, th) for th in thetas)
    vecs = np.array([analysis_vector(s, readout, dimension) for s in settings])
    vecs = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    return MubBasis(name, vecs, settings, (readout,) * len(settings))


def mub_bases(dimension: int) -> list[MubBasis]:
    """Mutually unbiased bases reachable with one modulator per photon.

    Qubits get Z, X and Y; qutrits get Z and the sign-twisted Fourier basis.
    """
    if dimension not in (2, 3):
        raise ValueError(
            f"MUBs for D={dimension} are not supported: the remaining bases "
            "cannot be implemented with a single phase modulator"
        )
    z = MubBasis("Z", np.eye(dimension, dtype=complex), (OFF,) * dimension, tuple(range(dimension)))
    if dimension == 2:
        x = _realized_basis("X", 2, (0.0, math.pi), 0)
        y = _realized_basis("Y", 2, (math.pi / 2, 3 * math.pi / 2), 0)
        return [z, x, y]
    f = _realized_basis("F", 3, (0.0, 2 * math.pi / 3, 4 * math.pi / 3), 1)
    return [z, f]


def get_mub_basis(dimension: int, name: str) -> MubBasis:
    for basis in mub_bases(dimension):
        if basis.name == name:
            return basis
    raise ValueError(
        f"basis {name!r} is not available for D={dimension}; the other mutually unbiased "
        "bases cannot be implemented with a single phase modulator"
    )

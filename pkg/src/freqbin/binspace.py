"""Frequency-bin grids, two-photon states and density matrices.

The joint computational basis orders ``|s, i>`` as ``s * D + i`` where ``s``
is the signal bin and ``i`` the idler bin.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = -1e-9
FILE_HERMITIAN_TOL = 1e-9


class StateError(ValueError):
    """Raised when a state or density matrix violates its contract."""


@dataclass(frozen=True)
class BinGrid:
    """Equidistant bin lattice for one signal/idler pair of combs.

    With ``half_step`` the addressable lattice has spacing ``spacing_ghz / 2``
    and computational bin ``k`` sits at lattice site ``2k``.
    """

    dimension: int
    spacing_ghz: float = 15.0
    signal_anchor_ghz: float = 193_500.0
    idler_anchor_ghz: float = 192_500.0
    guard_bins: int = 12
    half_step: bool = False

    def __post_init__(self):
        if self.dimension < 2:
            raise StateError(f"dimension must be >= 2, got {self.dimension}")
        if not self.spacing_ghz > 0:
            raise StateError(f"bin spacing must be positive, got {self.spacing_ghz}")
        if self.guard_bins < 0:
            raise StateError(f"guard_bins must be >= 0, got {self.guard_bins}")

    @property
    def steps_per_bin(self) -> int:
        return 2 if self.half_step else 1

    @property
    def lattice_spacing_ghz(self) -> float:
        return self.spacing_ghz / self.steps_per_bin

    @property
    def sites(self) -> int:
        """Number of lattice sites spanned by the computational bins."""
        return (self.dimension - 1) * self.steps_per_bin + 1

    def site(self, k: int) -> int:
        return k * self.steps_per_bin

    @property
    def window(self) -> tuple[int, int]:
        guard = self.guard_bins * self.steps_per_bin
        return -guard, self.sites - 1 + guard

    @property
    def window_sites(self) -> np.ndarray:
        lo, hi = self.window
        return np.arange(lo, hi + 1)

    def frequency(self, site: int, arm: str = "signal") -> float:
        if arm == "signal":
            anchor = self.signal_anchor_ghz
        elif arm == "idler":
            anchor = self.idler_anchor_ghz
        else:
            raise ValueError(f"unknown arm {arm!r}")
        return anchor + site * self.lattice_spacing_ghz

    def halved(self) -> BinGrid:
        """The same bins re-gridded onto the half-spacing lattice."""
        return BinGrid(
            self.dimension,
            self.spacing_ghz,
            self.signal_anchor_ghz,
            self.idler_anchor_ghz,
            self.guard_bins,
            half_step=True,
        )


@dataclass(frozen=True)
class TwoPhotonState:
    """Coefficients of ``sum_k alpha_k |k>_s |k>_i``; normalized on construction."""

    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).ravel()
        if a.size < 1 or not np.all(np.isfinite(a)):
            raise StateError("amplitudes must be a non-empty finite vector")
        norm = np.linalg.norm(a)
        if norm == 0:
            raise StateError("amplitudes are all zero")
        a = a / norm
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @property
    def dimension(self) -> int:
        return self.amplitudes.size

    def ket(self) -> np.ndarray:
        d = self.dimension
        psi = np.zeros(d * d, dtype=complex)
        psi[np.arange(d) * (d + 1)] = self.amplitudes
        return psi

    def density(self) -> DensityMatrix:
        psi = self.ket()
        return DensityMatrix(np.outer(psi, psi.conj()))


@dataclass(frozen=True)
class DensityMatrix:
    """Validated ``D^2 x D^2`` density matrix over the joint bin basis."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise StateError(f"density matrix must be square, got shape {m.shape}")
        d = int(round(np.sqrt(m.shape[0])))
        if d * d != m.shape[0]:
            raise StateError(f"size {m.shape[0]} is not a perfect square D^2")
        if not np.all(np.isfinite(m)):
            raise StateError("density matrix has non-finite entries")
        herm = np.max(np.abs(m - m.conj().T))
        if herm > HERMITIAN_TOL:
            raise StateError(f"not Hermitian: max |rho - rho^H| = {herm:.3e}")
        tr = np.trace(m)
        if abs(tr - 1) > TRACE_TOL:
            raise StateError(f"trace is {tr.real:.15f}, expected 1")
        lam = np.linalg.eigvalsh(m)[0]
        if lam < PSD_TOL:
            raise StateError(f"not positive semidefinite: smallest eigenvalue {lam:.3e}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def local_dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @classmethod
    def from_array(cls, m: np.ndarray) -> DensityMatrix:
        """Symmetrize and renormalize floating-point residue, then validate."""
        m = np.asarray(m, dtype=complex)
        m = 0.5 * (m + m.conj().T)
        return cls(m / np.trace(m).real)

    @classmethod
    def maximally_mixed(cls, local_dim: int) -> DensityMatrix:
        n = local_dim * local_dim
        return cls(np.eye(n) / n)

    def to_json(self) -> str:
        n = self.matrix.shape[0]
        doc = {
            "dim": n,
            "re": [float(x) for x in self.matrix.real.ravel()],
            "im": [float(x) for x in self.matrix.imag.ravel()],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> DensityMatrix:
        doc = json.loads(text)
        missing = {"dim", "re", "im"} - set(doc)
        if missing:
            raise StateError(f"density matrix document missing fields {sorted(missing)}")
        unknown = set(doc) - {"dim", "re", "im"}
        if unknown:
            raise StateError(f"density matrix document has unknown fields {sorted(unknown)}")
        n = int(doc["dim"])
        re = np.asarray(doc["re"], dtype=float)
        im = np.asarray(doc["im"], dtype=float)
        if re.size != n * n or im.size != n * n:
            raise StateError(f"expected {n * n} entries for dim {n}")
        m = (re + 1j * im).reshape(n, n)
        herm = np.max(np.abs(m - m.conj().T))
        if herm > FILE_HERMITIAN_TOL:
            raise StateError(f"density matrix file is not Hermitian (deviation {herm:.3e})")
        return cls.from_array(m)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> DensityMatrix:
        return cls.from_json(Path(path).read_text())


def _as_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return np.asarray(rho, dtype=complex)


def bell_state(dimension: int, signs) -> TwoPhotonState:
    """Equal-weight state with per-bin phases ``signs`` (entries of unit modulus)."""
    signs = np.asarray(signs, dtype=complex).ravel()
    if dimension < 2:
        raise StateError(f"dimension must be >= 2, got {dimension}")
    if signs.size != dimension:
        raise StateError(f"got {signs.size} signs for dimension {dimension}")
    if not np.allclose(np.abs(signs), 1.0, atol=1e-12):
        raise StateError("signs must have unit modulus")
    return TwoPhotonState(signs / np.sqrt(dimension))


def check_indistinguishability(indist, dimension: int | None = None) -> np.ndarray:
    """Validate a pairwise indistinguishability matrix and return it as an array."""
    m = np.asarray(indist, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise StateError(f"indistinguishability matrix must be square, got {m.shape}")
    if dimension is not None and m.shape[0] != dimension:
        raise StateError(f"indistinguishability matrix is {m.shape[0]}x{m.shape[0]}, expected {dimension}")
    if np.max(np.abs(m - m.conj().T)) > 1e-12:
        raise StateError("indistinguishability matrix is not Hermitian")
    if np.max(np.abs(np.diag(m) - 1)) > 1e-9:
        raise StateError("indistinguishability matrix must have unit diagonal")
    big = np.max(np.abs(m))
    if big > 1 + 1e-9:
        raise StateError(f"indistinguishability entries must satisfy |I| <= 1, found {big:.6f}")
    lam = np.linalg.eigvalsh(m)
    if lam[0] < PSD_TOL:
        raise StateError(f"indistinguishability matrix is not PSD: eigenvalue {lam[0]:.3e}")
    return m


def uniform_indistinguishability(dimension: int, value: float) -> np.ndarray:
    m = np.full((dimension, dimension), float(value), dtype=complex)
    np.fill_diagonal(m, 1.0)
    return m


def density_from_amplitudes(state: TwoPhotonState, indist=None) -> DensityMatrix:
    """Effective state with coherences ``<ii|rho|kk> = I_ik alpha_i alpha_k^*``."""
    d = state.dimension
    if indist is None:
        indist = np.ones((d, d))
    indist = check_indistinguishability(indist, d)
    a = state.amplitudes
    block = indist * np.outer(a, a.conj())
    rho = np.zeros((d * d, d * d), dtype=complex)
    diag = np.arange(d) * (d + 1)
    rho[np.ix_(diag, diag)] = block
    return DensityMatrix.from_array(rho)


def purity(rho) -> float:
    m = _as_matrix(rho)
    return float(np.real(np.trace(m @ m)))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh(m)
    # eigenvalues at round-off level are zero; their square roots would not be
    lam = np.where(lam > 1e-14 * max(lam[-1], 0.0), lam, 0.0)
    return (vec * np.sqrt(lam)) @ vec.conj().T


def fidelity(rho_r, rho_t, convention: str = "root") -> float:
    """Fidelity of ``rho_r`` with target ``rho_t``.

    ``root`` is ``Tr sqrt(sqrt(rho_t) rho_r sqrt(rho_t))``; ``overlap`` is
    ``Tr(rho_t rho_r)``, which equals the squared root fidelity for pure targets.
    """
    a = _as_matrix(rho_r)
    b = _as_matrix(rho_t)
    if a.shape != b.shape:
        raise StateError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if convention == "overlap":
        return float(np.real(np.trace(b @ a)))
    if convention != "root":
        raise ValueError(f"unknown fidelity convention {convention!r}")
    # nuclear norm of sqrt(rho_r) sqrt(rho_t); avoids square roots of round-off eigenvalues
    sv = np.linalg.svd(_psd_sqrt(a) @ _psd_sqrt(b), compute_uv=False)
    return float(min(np.sum(sv), 1.0))


# Cholesky parameterization: t = [diag (n), Re(lower) (n(n-1)/2), Im(lower) (n(n-1)/2)]


def cholesky_size(n: int) -> int:
    return n * n


def lower_from_params(t, n: int | None = None) -> np.ndarray:
    """Lower-triangular complex matrix ``T(t)`` with real diagonal."""
    t = np.asarray(t, dtype=float)
    if n is None:
        n = int(round(np.sqrt(t.size)))
    if t.size != n * n:
        raise StateError(f"parameter vector has length {t.size}, expected {n * n}")
    rows, cols = np.tril_indices(n, -1)
    m = rows.size
    lower = np.zeros((n, n), dtype=complex)
    lower[np.diag_indices(n)] = t[:n]
    lower[rows, cols] = t[n : n + m] + 1j * t[n + m :]
    return lower


def params_from_lower(lower: np.ndarray) -> np.ndarray:
    lower = np.asarray(lower, dtype=complex)
    n = lower.shape[0]
    rows, cols = np.tril_indices(n, -1)
    if np.max(np.abs(np.triu(lower, 1)), initial=0.0) > 0 or np.max(np.abs(np.diag(lower).imag)) > 1e-12:
        raise StateError("matrix is not lower triangular with real diagonal")
    vals = lower[rows, cols]
    return np.concatenate([np.diag(lower).real, vals.real, vals.imag])


def density_from_cholesky(t) -> DensityMatrix:
    """``rho(t) = T T^H / Tr(T T^H)``."""
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise StateError("Cholesky parameters must be finite")
    lower = lower_from_params(t)
    m = lower @ lower.conj().T
    tr = np.trace(m).real
    if tr == 0:
        raise StateError("all-zero Cholesky parameters cannot be normalized")
    d = int(round(np.sqrt(lower.shape[0])))
    if d * d != lower.shape[0]:
        raise StateError(f"T has size {lower.shape[0]}, which is not D^2")
    return DensityMatrix.from_array(m / tr)


def cholesky_factor(rho) -> np.ndarray:
    """Lower-triangular ``T`` with non-negative real diagonal and ``T T^H = rho``.

    Works for rank-deficient ``rho`` via a QR factorization of a square root.
    """
    m = _as_matrix(rho)
    lam, vec = np.linalg.eigh(0.5 * (m + m.conj().T))
    root = vec * np.sqrt(np.clip(lam, 0, None))
    # root root^H = rho; QR of root^H gives root = R^H Q^H
    _, r = np.linalg.qr(root.conj().T)
    lower = r.conj().T
    phases = np.exp(-1j * np.angle(np.diag(lower)))
    phases[np.abs(np.diag(lower)) == 0] = 1.0
    lower = lower * phases[np.newaxis, :]
    lower[np.diag_indices_from(lower)] = np.abs(np.diag(lower))
    return np.tril(lower)


def params_from_density(rho) -> np.ndarray:
    return params_from_lower(cholesky_factor(rho))

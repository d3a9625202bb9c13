"""Certification metrics: CGLMP parameter, dimension witness, MUB correlations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .binspace import (
    DensityMatrix,
    StateError,
    TwoPhotonState,
    _as_matrix,
    bell_state,
    density_from_amplitudes,
    fidelity,
    purity,
)
from .eom import MubBasis, mub_bases
from .measurement import computational_probabilities

# largest S reachable by any two-qudit state with two settings per party
CGLMP_QUANTUM_MAX = {2: 2 * math.sqrt(2), 3: 2.914854, 4: 2.972691}


@dataclass(frozen=True)
class CglmpSettings:
    """Fourier-basis offsets per party, plus optional per-bin local phases.

    Alice's setting ``a`` measures ``(1/sqrt D) sum_j exp(2 pi i j (k + alpha_a) / D + i phi_j) |j>``;
    Bob's measures ``(1/sqrt D) sum_j exp(-2 pi i j (l - beta_b) / D + i chi_j) |j>``.
    """

    alice: tuple[float, float] = (0.0, 0.5)
    bob: tuple[float, float] = (0.25, -0.25)
    alice_bin_phases: tuple[float, ...] | None = None
    bob_bin_phases: tuple[float, ...] | None = None

    def __post_init__(self):
        vals = list(self.alice) + list(self.bob) + list(self.alice_bin_phases or ()) + list(self.bob_bin_phases or ())
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("CGLMP offsets must be real and finite")


CANONICAL_CGLMP = CglmpSettings()


def _analyzers(d: int, offset: float, sign: int, bin_phases) -> np.ndarray:
    """Rows are conjugated measurement vectors (so ``rows @ psi`` are amplitudes)."""
    j = np.arange(d)
    k = np.arange(d)[:, None]
    phase = 2 * np.pi * j[None, :] * (k + sign * offset) / d * sign
    if bin_phases is not None:
        phase = phase + np.asarray(bin_phases, dtype=float)[None, :]
    return np.exp(-1j * phase) / math.sqrt(d)


def cglmp_joint_probabilities(rho, dimension: int, settings: CglmpSettings = CANONICAL_CGLMP) -> dict:
    """``P[(a, b)][k, l]`` for Alice setting ``a`` and Bob setting ``b``."""
    m = _as_matrix(rho)
    d = dimension
    if m.shape != (d * d, d * d):
        raise StateError(f"state has shape {m.shape}; expected {(d * d, d * d)} for D={d}")
    out = {}
    for a, alpha in enumerate(settings.alice):
        wa = _analyzers(d, alpha, 1, settings.alice_bin_phases)
        for b, beta in enumerate(settings.bob):
            wb = _analyzers(d, beta, -1, settings.bob_bin_phases)
            k = np.kron(wa, wb)
            out[(a, b)] = np.real(np.einsum("ij,jk,ik->i", k, m, k.conj())).reshape(d, d)
    return out


def _shift_prob(table: np.ndarray, shift: int, alice_first: bool) -> float:
    """``P(A = B + s)`` when ``alice_first`` else ``P(B = A + s)``."""
    d = table.shape[0]
    k = np.arange(d)
    if alice_first:
        return float(np.sum(table[k, (k - shift) % d]))
    return float(np.sum(table[k, (k + shift) % d]))


def cglmp_parameter(rho, dimension: int, settings: CglmpSettings = CANONICAL_CGLMP) -> float:
    """CGLMP Bell parameter ``S``; local models satisfy ``S <= 2``."""
    if dimension not in (2, 3, 4):
        raise ValueError(f"CGLMP is provided for D in {{2, 3, 4}}, got {dimension}")
    p = cglmp_joint_probabilities(rho, dimension, settings)
    d = dimension
    s = 0.0
    for k in range(d // 2):
        w = 1 - 2 * k / (d - 1)
        plus = (
            _shift_prob(p[(0, 0)], k, True)
            + _shift_prob(p[(1, 0)], k + 1, False)
            + _shift_prob(p[(1, 1)], k, True)
            + _shift_prob(p[(0, 1)], k, False)
        )
        minus = (
            _shift_prob(p[(0, 0)], -k - 1, True)
            + _shift_prob(p[(1, 0)], -k, False)
            + _shift_prob(p[(1, 1)], -k - 1, True)
            + _shift_prob(p[(0, 1)], -k - 1, False)
        )
        s += w * (plus - minus)
    return s


def _phases_from_state(rho, d: int) -> np.ndarray:
    m = _as_matrix(rho)
    ref = [m[0, j * d + j] for j in range(d)]
    return np.array([-np.angle(r) if abs(r) > 1e-12 else 0.0 for r in ref])


def optimize_cglmp_settings(
    rho, dimension: int, restarts: int = 4, seed: int = 0, start: CglmpSettings | None = None
) -> tuple[float, CglmpSettings]:
    """Maximize ``S`` over offsets and Alice's local bin phases.

    Local phases start from those that undo the relative phases of the
    ``|jj>`` coherences, so sign-patterned Bell states map onto the uniform
    one; Nelder-Mead then polishes from that start and a few seeded ones.
    ``start`` adds a caller-supplied starting point (e.g. a previous optimum).
    """
    d = dimension
    base = _phases_from_state(rho, d)

    def unpack(x):
        return CglmpSettings((x[0], x[1]), (x[2], x[3]), tuple(np.concatenate([[0.0], x[4:]])))

    def neg(x):
        return -cglmp_parameter(rho, d, unpack(x))

    starts = [np.concatenate([[0.0, 0.5, 0.25, -0.25], base[1:] - base[0]])]
    if start is not None:
        phases = start.alice_bin_phases or (0.0,) * d
        starts.append(np.concatenate([start.alice, start.bob, np.asarray(phases[1:]) - phases[0]]))
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        starts.append(np.concatenate([rng.uniform(-0.5, 0.5, 4), rng.uniform(-np.pi, np.pi, d - 1)]))
    best_s, best = cglmp_parameter(rho, d), CANONICAL_CGLMP
    for x0 in starts:
        res = minimize(neg, x0, method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000})
        if -res.fun > best_s:
            best_s, best = float(-res.fun), unpack(res.x)
    return best_s, best


def dimension_witness(z_counts) -> tuple[float, int]:
    """``(sum_k sqrt(q_kk))^2`` over normalized Z-basis coincidences and its ceiling."""
    c = np.asarray(z_counts, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("Z-basis table must be square")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise ValueError("Z-basis counts must be finite and non-negative")
    total = c.sum()
    if total <= 0:
        raise ValueError("Z-basis table has zero total counts")
    diag = np.diag(c)
    # expanded square: sqrt(c_j c_k) is exact for equal counts, so uniform tables give D exactly
    value = math.fsum(np.sqrt(np.outer(diag, diag)).ravel()) / float(total)
    return value, int(math.ceil(value - 1e-9))


@dataclass(frozen=True)
class CorrelationMatrix:
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.row_labels), len(self.col_labels)):
            raise ValueError("label counts do not match the matrix shape")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("correlation entries must lie in [0, 1]")

    def block(self, row_basis: str, col_basis: str) -> np.ndarray:
        r = [i for i, lab in enumerate(self.row_labels) if lab.split(":")[0] == row_basis]
        c = [i for i, lab in enumerate(self.col_labels) if lab.split(":")[0] == col_basis]
        return self.values[np.ix_(r, c)]


def _correlations(rho, d: int, bases: list[MubBasis]) -> CorrelationMatrix:
    labels = tuple(f"{b.name}:{j}" for b in bases for j in range(d))
    rows = []
    for ba in bases:
        for j in range(d):
            row = []
            for bb in bases:
                for k in range(d):
                    setting = (ba.settings[j], bb.conjugate_setting(k))
                    probs = computational_probabilities(rho, setting, d)
                    row.append(probs[ba.readout_bins[j], bb.readout_bins[k]])
            rows.append(row)
    return CorrelationMatrix(labels, labels, np.clip(np.array(rows), 0.0, None))


def mub_correlation(rho, dimension: int, target=None) -> tuple[CorrelationMatrix, CorrelationMatrix]:
    """Simulated correlation matrix ``C_e`` for ``rho`` and ``C_t`` for ``target``.

    Both go through the same modulator model, so unnormalized projectors and
    their sub-unit totals affect them identically.  ``target`` defaults to
    the uniform Bell state.
    """
    bases = mub_bases(dimension)
    if target is None:
        target = density_from_amplitudes(bell_state(dimension, np.ones(dimension)))
    return _correlations(rho, dimension, bases), _correlations(target, dimension, bases)


def mub_fidelity(c_e, c_t) -> float:
    """``Tr(Ce^H Ct) Tr(Ct^H Ce) / (Tr(Ce^H Ce) Tr(Ct^H Ct))``."""
    a = np.asarray(getattr(c_e, "values", c_e), dtype=complex)
    b = np.asarray(getattr(c_t, "values", c_t), dtype=complex)
    if a.shape != b.shape:
        raise ValueError("correlation matrices differ in shape")
    na = np.real(np.vdot(a, a))
    nb = np.real(np.vdot(b, b))
    if na == 0 or nb == 0:
        raise ValueError("correlation matrix has zero norm")
    ab = np.vdot(a, b)
    return float(np.real(ab * np.conj(ab)) / (na * nb))


# Sign patterns over rings R0..R3; zero means the ring is off.
TARGET_PATTERNS = {
    "Phi1": (0, 0, 1, 1),
    "Phi2": (0, 1, 1, 1),
    "Phi3": (0, 1, -1, -1),
    "Phi4": (0, 1, 0, 1),
    "Phi5": (1, 1, 1, 1),
    "Phi6": (1, -1, -1, 1),
}


@dataclass(frozen=True)
class Target:
    name: str
    pattern: tuple[int, ...]

    @property
    def signs(self) -> np.ndarray:
        """Amplitudes on the measured bins: first lit ring through R3."""
        p = np.asarray(self.pattern, dtype=float)
        first = int(np.flatnonzero(p)[0])
        return p[first:]

    @property
    def dimension(self) -> int:
        return self.signs.size

    @property
    def support(self) -> tuple[int, ...]:
        """Measured bins that the target populates."""
        return tuple(int(k) for k in np.flatnonzero(self.signs))

    def state(self) -> TwoPhotonState:
        return TwoPhotonState(self.signs.astype(complex))

    def density(self) -> DensityMatrix:
        return density_from_amplitudes(self.state())


def get_target(name: str) -> Target:
    if name not in TARGET_PATTERNS:
        raise ValueError(f"unknown target {name!r}; choose from {', '.join(TARGET_PATTERNS)}")
    return Target(name, TARGET_PATTERNS[name])


@dataclass
class MetricsReport:
    values: dict
    errors: dict = field(default_factory=dict)
    seed: int | None = None
    resamples: int = 0

    def as_dict(self) -> dict:
        out = {"seed": self.seed, "resamples": self.resamples}
        for k, v in self.values.items():
            out[k] = {"value": v, "error": self.errors.get(k)}
        return out


def project_to_bins(rho, dimension: int, bins) -> DensityMatrix:
    """Restrict both photons to ``bins`` and renormalize."""
    m = _as_matrix(rho)
    bins = list(bins)
    idx = [a * dimension + b for a in bins for b in bins]
    sub = m[np.ix_(idx, idx)]
    tr = np.real(np.trace(sub))
    if tr <= 0:
        raise StateError("state has no weight on the selected bins")
    return DensityMatrix.from_array(sub / tr)


def target_cglmp(rho, target, mode: str = "optimized", start: CglmpSettings | None = None, restarts: int = 4):
    """CGLMP value on the bins the target populates, and the settings used.

    Targets that skip a bin inside their span (Phi4) are tested on the
    populated bins only, after projecting and renormalizing ``rho``.
    """
    if isinstance(target, str):
        target = get_target(target)
    support = target.support
    d = target.dimension
    bell_rho = rho if len(support) == d else project_to_bins(rho, d, support)
    if mode == "canonical":
        return cglmp_parameter(bell_rho, len(support)), CANONICAL_CGLMP
    if mode == "optimized":
        return optimize_cglmp_settings(bell_rho, len(support), restarts=restarts, start=start)
    raise ValueError("cglmp mode must be 'canonical' or 'optimized'")


def state_metrics(rho, target, cglmp_mode: str = "optimized", cglmp_start: CglmpSettings | None = None, restarts: int = 4) -> dict:
    """Fidelities, purity, CGLMP and (for D <= 3) MUB fidelity of ``rho``."""
    if isinstance(target, str):
        target = get_target(target)
    rho = rho if isinstance(rho, DensityMatrix) else DensityMatrix.from_array(rho)
    t_rho = target.density()
    d = target.dimension
    if rho.local_dim != d:
        raise StateError(f"state has local dimension {rho.local_dim}; target {target.name} needs {d}")
    s, _ = target_cglmp(rho, target, cglmp_mode, cglmp_start, restarts)
    out = {
        "fidelity_root": fidelity(rho, t_rho, "root"),
        "fidelity_overlap": fidelity(rho, t_rho, "overlap"),
        "purity": purity(rho),
        "cglmp": s,
    }
    if d in (2, 3):
        c_e, c_t = mub_correlation(rho, d, t_rho)
        out["mub_fidelity"] = mub_fidelity(c_e, c_t)
    return out


def witness_with_errors(z_counts, resamples: int = 200, seed: int = 0) -> tuple[float, int, float]:
    """Witness value, certified dimension and Poisson-resampled standard deviation."""
    value, cert = dimension_witness(z_counts)
    c = np.asarray(z_counts, dtype=float)
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(resamples):
        sample = rng.poisson(c)
        if sample.sum() > 0:
            draws.append(dimension_witness(sample)[0])
    err = float(np.std(draws, ddof=1)) if len(draws) > 1 else float("nan")
    return value, cert, err

"""Maximum-likelihood state tomography from coincidence counts.

Candidate states are parameterized as ``rho = T T^H / Tr(T T^H)`` with ``T``
lower triangular, so every point of the search space is a valid density
matrix.  A particle swarm explores ``(t, R)`` and an L-BFGS pass with the
analytic gradient polishes the best particle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .binspace import (
    BinGrid,
    DensityMatrix,
    density_from_cholesky,
    lower_from_params,
    params_from_density,
    params_from_lower,
)
from .eom import (
    IDLER_CALIBRATION,
    SIGNAL_CALIBRATION,
    ModulatorCalibration,
    projector_family,
)
from .measurement import CoincidenceRecord, MeasurementSetting

COUNT_FLOOR = 1e-3
DEFAULT_COST_THRESHOLD = 5.0


class UnderdeterminedError(ValueError):
    """Fewer records than the ``D^4`` real parameters of a density matrix."""


def settings_table(dimension: int) -> list[MeasurementSetting]:
    """Modulator settings used for tomography (5 for qubits, 17 otherwise)."""
    p_s, p_i = 22.1, 24.3
    if dimension == 2:
        rows = [
            (0.0, 0.0, 0.0, 0.0),
            (p_s, 0.0, p_i, 0.0),
            (p_s, math.pi / 2, p_i, -math.pi / 2),
            (p_s, 0.0, 0.0, 0.0),
            (0.0, 0.0, p_i, 0.0),
        ]
    elif dimension in (3, 4):
        # -4pi/3 and 2pi/3 are the same RF phase; both rows are kept on purpose
        phases = (0.0, 4 * math.pi / 3, -4 * math.pi / 3, 2 * math.pi / 3)
        rows = [(p_s, a, p_i, b) for a in phases for b in phases] + [(0.0, 0.0, 0.0, 0.0)]
    else:
        raise ValueError(f"no tomography settings table for D={dimension}; supported: 2, 3, 4")
    return [MeasurementSetting(f"g{j + 1}", *row) for j, row in enumerate(rows)]


@dataclass(frozen=True)
class Povm:
    setting_id: str
    m: int
    n: int
    operator: np.ndarray


@dataclass(frozen=True)
class PovmSet:
    dimension: int
    elements: tuple[Povm, ...]

    def __len__(self) -> int:
        return len(self.elements)

    def lookup(self) -> dict[tuple[str, int, int], Povm]:
        return {(e.setting_id, e.m, e.n): e for e in self.elements}

    def measurement_matrix(self) -> np.ndarray:
        """Rows ``conj(P).ravel()`` so that ``Re(A @ rho.ravel()) = Tr(rho P)``."""
        return np.array([e.operator.conj().ravel() for e in self.elements])


def build_povms(
    settings,
    grid: BinGrid | None = None,
    cal_s: ModulatorCalibration = SIGNAL_CALIBRATION,
    cal_i: ModulatorCalibration = IDLER_CALIBRATION,
    dimension: int | None = None,
) -> PovmSet:
    """POVM elements ``U^H |mn><mn| U`` restricted to the computational bins.

    ``U`` is built on the guarded window so truncation is checked; rows for
    readout ``(m, n)`` are then cut down to computational inputs.
    """
    if grid is None:
        if dimension is None:
            raise ValueError("pass a grid or a dimension")
        grid = BinGrid(dimension)
    d = grid.dimension
    comp = np.array([grid.site(k) for k in range(d)])
    elements = []
    for s in settings:
        ms, mi = s.modulators(cal_s, cal_i)
        u = projector_family(ms, mi, grid).restricted(comp, comp)
        for m in range(d):
            for n in range(d):
                row = u[m * d + n]
                op = np.outer(row.conj(), row)
                elements.append(Povm(s.id, m, n, op))
    return PovmSet(d, tuple(elements))


def informational_rank(povms: PovmSet, tol: float = 1e-9) -> int:
    """Rank of the linear map ``rho -> {Tr(rho P)}`` over Hermitian ``rho``."""
    sv = np.linalg.svd(povms.measurement_matrix(), compute_uv=False)
    return int(np.sum(sv > tol * sv[0]))


@dataclass(frozen=True)
class PsoOptions:
    particles: int = 60
    iterations: int = 2000
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0
    t_bound: float = 1.0
    rate_bounds: tuple[float, float] = (0.1, 10.0)
    refine: bool = True
    cost_threshold: float = DEFAULT_COST_THRESHOLD
    count_floor: float = COUNT_FLOOR

    def __post_init__(self):
        if self.particles < 2 or self.iterations < 1:
            raise ValueError("need at least 2 particles and 1 iteration")
        if not (0 < self.rate_bounds[0] < self.rate_bounds[1]) or self.t_bound <= 0:
            raise ValueError("invalid parameter bounds")


def _sort_key(rec: CoincidenceRecord):
    return (rec.setting_id, rec.m, rec.n, rec.integration_s, rec.counts)


class TomographyProblem:
    """Counts, POVMs and loss model for one reconstruction."""

    def __init__(self, dimension: int, povms: PovmSet, records, loss=None, options: PsoOptions | None = None):
        if povms.dimension != dimension:
            raise ValueError("POVM set dimension does not match the problem")
        self.dimension = dimension
        self.options = options or PsoOptions()
        self.loss = np.ones((dimension, dimension)) if loss is None else np.asarray(loss, dtype=float)
        if self.loss.shape != (dimension, dimension) or np.any(self.loss < 0) or np.any(self.loss > 1):
            raise ValueError("loss table must be D x D with entries in [0, 1]")
        # canonical order makes the result independent of the input order
        self.records = tuple(sorted(records, key=_sort_key))
        if len(self.records) < dimension**4:
            raise UnderdeterminedError(
                f"{len(self.records)} records cannot determine a D={dimension} state; need at least {dimension**4}"
            )
        table = povms.lookup()
        ops = []
        for r in self.records:
            if not (0 <= r.m < dimension and 0 <= r.n < dimension):
                raise ValueError(f"record ({r.setting_id}, {r.m}, {r.n}) lies outside the D={dimension} bins")
            key = (r.setting_id, r.m, r.n)
            if key not in table:
                raise ValueError(f"record {key} has no POVM element")
            ops.append(table[key].operator.conj().ravel())
        self.matrix = np.array(ops)
        self.observed = np.array([r.counts for r in self.records], dtype=float)
        self.scale = np.array([self.loss[r.m, r.n] * r.integration_s for r in self.records])

    @property
    def n_params(self) -> int:
        return self.dimension**4

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        """``Tr(rho P_q)`` for one matrix or a stack of matrices."""
        rho = np.asarray(rho)
        flat = rho.reshape(*rho.shape[:-2], -1)
        return np.real(flat @ self.matrix.T)

    def rate_estimate(self) -> float:
        """Pair rate that explains the total counts with a maximally mixed state."""
        n = self.dimension**2
        p = self.probabilities(np.eye(n) / n)
        denom = float(np.sum(self.scale * p))
        total = float(self.observed.sum())
        if denom <= 0 or total <= 0:
            raise ValueError("counts carry no signal; cannot estimate the pair rate")
        return total / denom

    def _terms(self, predicted):
        floor = self.options.count_floor
        c_exp = self.observed
        clamped = predicted < floor
        c = np.where(clamped, floor, predicted)
        terms = (c - c_exp) ** 2 / (2 * c)
        terms = np.where(clamped & (c_exp == 0), 0.0, terms)
        dterm = np.where(clamped, 0.0, (c**2 - c_exp**2) / (2 * c**2))
        return terms, dterm

    def cost_from_density(self, rho, rate: float) -> float:
        rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
        pred = rate * self.scale * self.probabilities(rho)
        return float(np.mean(self._terms(pred)[0]))

    def predicted_counts(self, rho, rate: float) -> np.ndarray:
        rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
        return rate * self.scale * self.probabilities(rho)


def _batch_density(t: np.ndarray, n: int) -> np.ndarray:
    rows, cols = np.tril_indices(n, -1)
    m = rows.size
    lower = np.zeros((t.shape[0], n, n), dtype=complex)
    idx = np.arange(n)
    lower[:, idx, idx] = t[:, :n]
    lower[:, rows, cols] = t[:, n : n + m] + 1j * t[:, n + m :]
    prod = lower @ np.conj(np.swapaxes(lower, 1, 2))
    tr = np.real(np.trace(prod, axis1=1, axis2=2))
    tr = np.where(tr > 0, tr, np.nan)
    return prod / tr[:, None, None]


def cost(t, rate: float, problem: TomographyProblem) -> float:
    """``(1/n) sum (C_theo - C_exp)^2 / (2 C_theo)`` for parameters ``(t, R)``."""
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(t)) and math.isfinite(rate)):
        raise ValueError("cost parameters must be finite")
    rho = density_from_cholesky(t)
    return problem.cost_from_density(rho.matrix, rate)


def batch_cost(x: np.ndarray, rate0: float, problem: TomographyProblem) -> np.ndarray:
    """Cost for rows ``x = [t..., R / R0]``; degenerate ``T = 0`` scores ``inf``."""
    n = problem.dimension**2
    rho = _batch_density(x[:, :-1], n)
    pred = (rate0 * x[:, -1])[:, None] * problem.scale[None, :] * problem.probabilities(rho)
    terms, _ = problem._terms(pred)
    out = terms.mean(axis=1)
    return np.where(np.isfinite(out), out, np.inf)


def cost_and_gradient(t, rate: float, problem: TomographyProblem) -> tuple[float, np.ndarray, float]:
    """Cost with its gradient in ``t`` and its derivative in ``R``."""
    n = problem.dimension**2
    lower = lower_from_params(t, n)
    prod = lower @ lower.conj().T
    tau = float(np.real(np.trace(prod)))
    if tau <= 0:
        raise ValueError("zero Cholesky factor")
    rho = prod / tau
    p = problem.probabilities(rho)
    pred = rate * problem.scale * p
    terms, dterm = problem._terms(pred)
    k = terms.size
    f = float(terms.mean())
    g = dterm * rate * problem.scale / k  # df/dp_q
    big_g = (g @ problem.matrix).reshape(n, n).conj()  # sum g_q P_q
    wirt = (big_g @ lower - float(g @ p) * lower) / tau
    grad_lower = 2 * wirt
    grad_lower = np.tril(grad_lower)
    grad_t = params_from_lower(np.tril(grad_lower, -1) + np.diag(np.diag(grad_lower).real))
    d_rate = float(np.sum(dterm * problem.scale * p) / k)
    return f, grad_t, d_rate


@dataclass(frozen=True)
class ReconstructionResult:
    density: DensityMatrix
    rate: float
    cost: float
    iterations: int
    residuals: np.ndarray
    seed: int
    converged: bool
    cost_trace: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    refined: bool = False


def _run_swarm(problem: TomographyProblem, rate0: float, start=None):
    opt = problem.options
    rng = np.random.default_rng(opt.seed)
    dim = problem.n_params + 1
    lo = np.full(dim, -opt.t_bound)
    hi = np.full(dim, opt.t_bound)
    lo[-1], hi[-1] = opt.rate_bounds
    span = hi - lo

    x = lo + span * rng.random((opt.particles, dim))
    n = problem.dimension**2
    anchor = np.concatenate([np.full(n, opt.t_bound / 2), np.zeros(problem.n_params - n), [1.0]])
    x[0] = anchor if start is None else np.clip(start, lo, hi)
    v = (rng.random((opt.particles, dim)) - 0.5) * span * 0.1
    f = batch_cost(x, rate0, problem)
    pbest, pcost = x.copy(), f.copy()
    g = int(np.argmin(pcost))
    gbest, gcost = pbest[g].copy(), float(pcost[g])
    trace = [gcost]
    vmax = 0.5 * span
    for _ in range(opt.iterations):
        r1 = rng.random((opt.particles, dim))
        r2 = rng.random((opt.particles, dim))
        v = opt.inertia * v + opt.cognitive * r1 * (pbest - x) + opt.social * r2 * (gbest - x)
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, lo, hi)
        f = batch_cost(x, rate0, problem)
        better = f < pcost
        pbest[better] = x[better]
        pcost[better] = f[better]
        g = int(np.argmin(pcost))
        if pcost[g] < gcost:
            gbest, gcost = pbest[g].copy(), float(pcost[g])
        assert gcost <= trace[-1], "global best cost increased"
        trace.append(gcost)
    return gbest, gcost, np.array(trace)


def _refine(problem: TomographyProblem, t0: np.ndarray, rate0: float, ftol: float = 1e-15, maxiter: int = 5000):
    """L-BFGS on ``(t, log R)`` starting from the swarm optimum."""

    def fun(z):
        t, log_r = z[:-1], z[-1]
        r = math.exp(log_r)
        try:
            f, gt, gr = cost_and_gradient(t, r, problem)
        except ValueError:
            return float("inf"), np.zeros_like(z)
        return f, np.concatenate([gt, [gr * r]])

    z0 = np.concatenate([t0, [math.log(rate0)]])
    res = minimize(fun, z0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "ftol": ftol, "gtol": 1e-12})
    return res.x[:-1], math.exp(res.x[-1]), float(res.fun)


def pso_reconstruct(problem: TomographyProblem, start: DensityMatrix | None = None) -> ReconstructionResult:
    """Particle-swarm reconstruction followed by a gradient polish.

    ``start`` optionally seeds one particle (used for warm-started
    bootstrap refits); the rest of the swarm is drawn from the seeded RNG.
    """
    opt = problem.options
    rate0 = problem.rate_estimate()
    seed_vec = None
    if start is not None:
        t = params_from_density(start)
        scale = np.max(np.abs(t))
        seed_vec = np.concatenate([t / scale * opt.t_bound, [1.0]])
    best, best_cost, trace = _run_swarm(problem, rate0, seed_vec)
    t, rate, final = best[:-1], rate0 * best[-1], best_cost
    refined = False
    if opt.refine:
        t2, r2, c2 = _refine(problem, t, rate)
        if math.isfinite(c2) and c2 <= final:
            t, rate, final, refined = t2, r2, c2, True
    rho = density_from_cholesky(t)
    # recompute on the returned matrix so cost and density agree exactly
    final = problem.cost_from_density(rho.matrix, rate)
    residuals = problem.observed - problem.predicted_counts(rho, rate)
    return ReconstructionResult(
        density=rho,
        rate=float(rate),
        cost=float(final),
        iterations=opt.iterations,
        residuals=residuals,
        seed=opt.seed,
        converged=bool(final <= opt.cost_threshold),
        cost_trace=trace,
        refined=refined,
    )


def refit(problem: TomographyProblem, rho, rate: float, ftol: float = 1e-10) -> tuple[DensityMatrix, float, float]:
    """Gradient-only refit warm-started at ``(rho, rate)``; used for resampled data."""
    t0 = params_from_density(rho)
    t, r, c = _refine(problem, t0, rate, ftol=ftol)
    if not math.isfinite(c):
        return (rho if isinstance(rho, DensityMatrix) else DensityMatrix.from_array(rho)), rate, c
    return density_from_cholesky(t), r, c


def reconstruct(records, dimension: int, loss=None, options: PsoOptions | None = None, grid: BinGrid | None = None, settings=None):
    """Convenience wrapper: Table-based POVMs, problem assembly and PSO."""
    settings = settings_table(dimension) if settings is None else settings
    povms = build_povms(settings, grid or BinGrid(dimension))
    return pso_reconstruct(TomographyProblem(dimension, povms, records, loss, options))

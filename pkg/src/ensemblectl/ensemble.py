"""Heterogeneous agent populations and structured block parameters.

``EnsembleModel`` samples agent parameters, factorizes every agent, and
records the population factor-norm constants.  ``BlockQ`` holds the ensemble
parameter: one FIR entry per diagonal plus off-diagonal entries that are
scalar multiples of their column's diagonal entry, which makes the column
dominance level exact by homogeneity.  Dense assemblies (``phi_at``,
``psi_at``) provide the oracle path; frequency-batched adapters feed the norm
engine for large populations.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

from .config import DominanceProfile, GridSettings, SynthesisSettings
from .lti import FirMatrix, freq_response, lambda_grid
from .matching import MatchingSolution, agent_problem, solve
from .norms import BlockCouplingOperator, FrequencyGrid, hinf_norm
from .youla import InfeasiblePlantError, YoulaFactors, factorize_agent

__all__ = [
    "AgentRecord",
    "EnsembleModel",
    "BlockQ",
    "DominanceProfile",
    "sample_parameters",
    "sample_population",
    "selfish_Q",
    "make_alpha_dominant",
    "check_dominance",
    "phi_at",
    "psi_at",
    "average_block_norm",
    "average_term_h2_scaled",
    "lemma_bound_hinf",
    "lemma_bound_h2",
    "lemma_bound_h2_total",
    "save_snapshot",
    "load_snapshot",
]

A_RANGE = (0.5, 1.5)
B_RANGE = (0.8, 1.2)


@dataclass(frozen=True)
class AgentRecord:
    """One sampled agent: parameters, factor triple, and factor norms."""

    a: float
    b: float
    factors: YoulaFactors
    norm_h: float
    norm_u: float
    norm_v: float


def sample_parameters(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform (a_i, b_i) draws; agent i's stream is independent of n.

    Each agent gets its own spawned child stream, so populations with the
    same seed are nested prefixes of each other.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n)
    a = np.empty(n)
    b = np.empty(n)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        a[i] = rng.uniform(*A_RANGE)
        b[i] = rng.uniform(*B_RANGE)
    return a, b


class EnsembleModel:
    """Population of factorized agents with recorded norm constants."""

    def __init__(self, agents: list[AgentRecord], seed: int, settings: SynthesisSettings):
        if len(agents) < 2:
            raise ValueError("an ensemble needs at least 2 agents")
        self.agents = agents
        self.seed = seed
        self.settings = settings
        self.gamma_h = max(ag.norm_h for ag in agents)
        self.gamma_u = max(ag.norm_u for ag in agents)
        self.gamma_v = max(ag.norm_v for ag in agents)
        self.resample_count = 0
        self._table_cache: dict[bytes, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def pz(self) -> int:
        return self.agents[0].factors.H.n_outputs

    @property
    def mw(self) -> int:
        return self.agents[0].factors.H.n_inputs

    def truncate(self, m: int) -> "EnsembleModel":
        """Prefix sub-population of the first m agents (constants recomputed)."""
        if not 2 <= m <= self.n_agents:
            raise ValueError("truncation size out of range")
        model = EnsembleModel(self.agents[:m], self.seed, self.settings)
        model.resample_count = self.resample_count
        return model

    # -- frequency tables ------------------------------------------------

    def factor_tables(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(Hf, Uf, Vf) responses on the grid: (F,n,pz,mw), (F,n,pz), (F,n,mw)."""
        thetas = np.asarray(thetas, dtype=float)
        key = thetas.tobytes()
        hit = self._table_cache.get(key)
        if hit is not None:
            return hit
        lams = lambda_grid(thetas)
        n, f = self.n_agents, thetas.size
        hf = np.empty((f, n, self.pz, self.mw), dtype=complex)
        uf = np.empty((f, n, self.pz), dtype=complex)
        vf = np.empty((f, n, self.mw), dtype=complex)
        for i, ag in enumerate(self.agents):
            hf[:, i] = ag.factors.H.response_grid(lams)
            uf[:, i] = ag.factors.U.response_grid(lams)[:, :, 0]
            vf[:, i] = ag.factors.V.response_grid(lams)[:, 0, :]
        if len(self._table_cache) > 4:
            self._table_cache.clear()
        self._table_cache[key] = (hf, uf, vf)
        return hf, uf, vf

    # -- adapters for the norm engine -------------------------------------

    def hinf_evaluator(self, q: "BlockQ", channels: tuple[int, ...], deviation: bool):
        return _EnsembleHinfEvaluator(self, q, channels, deviation)

    def agent_block_evaluators(self, q: "BlockQ", channels: tuple[int, ...]):
        if not q.is_diagonal():
            raise ValueError("per-agent evaluators require a diagonal parameter")
        return [
            _AgentBlockEvaluator(ag.factors, q.diag_taps[i], channels)
            for i, ag in enumerate(self.agents)
        ]

    def parseval_energy(
        self, q: "BlockQ", channels: tuple[int, ...], deviation: bool, n_grid: int
    ) -> float:
        """Mean over the full circle of the squared Frobenius norm (Parseval)."""
        ks = np.arange(n_grid // 2 + 1)
        thetas = 2.0 * np.pi * ks / n_grid
        weights = np.full(ks.size, 2.0)
        weights[0] = 1.0
        weights[-1] = 1.0
        hf, uf, vf = self.factor_tables(thetas)
        qd = q.eval_diag(lambda_grid(thetas))
        coeffs = q.off_coeffs
        frob = np.zeros(thetas.size)
        v_sq = np.sum(np.abs(vf) ** 2, axis=2)  # (F, n)
        q_sq = np.abs(qd) ** 2
        for c in channels:
            diag = hf[:, :, c, :] - (uf[:, :, c] * qd)[:, :, None] * vf
            frob += np.einsum("fnm->f", np.abs(diag) ** 2)
            if coeffs is not None:
                u_sq = np.abs(uf[:, :, c]) ** 2
                col_mass = u_sq @ (coeffs**2)  # (F, n): sum_i C_ij^2 |U_i|^2
                frob += np.sum(col_mass * q_sq * v_sq, axis=1)
            if deviation and c == 0:
                utot = uf[:, :, 0].copy()
                if coeffs is not None:
                    utot += uf[:, :, 0] @ coeffs
                mean = (hf[:, :, 0, :] - (utot * qd)[:, :, None] * vf) / self.n_agents
                frob -= self.n_agents * np.einsum("fnm->f", np.abs(mean) ** 2)
        return float(np.sum(weights * frob) / n_grid)

    def mean_term_rows(self, q: "BlockQ", thetas: np.ndarray) -> np.ndarray:
        """Column sums of the deviation-channel blocks: (F, n, mw).

        Row ``j`` is ``H_j - (sum_i C~_ij U_i) Q_jj V_j`` on the z channel,
        the ingredient of the ensemble-average (mean-field) term.
        """
        hf, uf, vf = self.factor_tables(thetas)
        qd = q.eval_diag(lambda_grid(thetas))
        utot = uf[:, :, 0].copy()
        if q.off_coeffs is not None:
            utot += uf[:, :, 0] @ q.off_coeffs
        return hf[:, :, 0, :] - (utot * qd)[:, :, None] * vf


class _EnsembleHinfEvaluator:
    """sigma_grid adapter: structured power iteration over the assembly."""

    def __init__(self, model: EnsembleModel, q: "BlockQ", channels, deviation):
        self.model = model
        self.q = q
        self.channels = tuple(channels)
        self.deviation = deviation
        self.last_meta: dict[str, Any] = {}

    def operator(self, thetas: np.ndarray) -> BlockCouplingOperator:
        hf, uf, vf = self.model.factor_tables(thetas)
        qd = self.q.eval_diag(lambda_grid(thetas))
        return BlockCouplingOperator(
            hf, uf, vf, qd, self.q.off_coeffs, self.channels, self.deviation
        )

    def sigma_grid(self, thetas: np.ndarray) -> np.ndarray:
        values, meta = self.operator(np.asarray(thetas, dtype=float)).sigma_max()
        self.last_meta = meta
        return values


class _AgentBlockEvaluator:
    """Dense per-agent closed-loop block ``H_i - U_i Q_ii V_i`` (selected rows)."""

    def __init__(self, factors: YoulaFactors, taps: np.ndarray, channels):
        self.factors = factors
        self.fir = FirMatrix(np.asarray(taps, dtype=float).reshape(-1, 1, 1))
        self.channels = list(channels)

    def response_grid(self, lams: np.ndarray) -> np.ndarray:
        lams = np.asarray(lams, dtype=complex)
        h = self.factors.H.response_grid(lams)[:, self.channels, :]
        u = self.factors.U.response_grid(lams)[:, self.channels, :]
        v = self.factors.V.response_grid(lams)
        z = self.fir.response_grid(lams)[:, 0, 0]
        return h - z[:, None, None] * np.einsum("fpo,fom->fpm", u, v)


def sample_population(
    n: int, seed: int, settings: SynthesisSettings | None = None
) -> EnsembleModel:
    """Sample, factorize, and bound-check a population of n agents.

    A draw whose factorization fails is resampled from the same agent stream
    (counted on the model).  Same seed gives a bit-identical model, and the
    first m agents coincide with ``sample_population(m, seed)``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    settings = settings or SynthesisSettings()
    children = np.random.SeedSequence(seed).spawn(n)
    agents: list[AgentRecord] = []
    resamples = 0
    for child in children:
        rng = np.random.default_rng(child)
        for _ in range(20):
            a = rng.uniform(*A_RANGE)
            b = rng.uniform(*B_RANGE)
            try:
                factors = factorize_agent(a, b, settings)
                break
            except InfeasiblePlantError:
                resamples += 1
        else:
            raise InfeasiblePlantError(f"agent resampling exhausted (seed {seed})")
        agents.append(_record_for(a, b, factors))
    model = EnsembleModel(agents, seed, settings)
    model.resample_count = resamples
    if resamples:
        warnings.warn(f"resampled {resamples} infeasible draws", stacklevel=2)
    return model


def _record_for(a: float, b: float, factors: YoulaFactors) -> AgentRecord:
    quick = GridSettings(n_points=256)
    return AgentRecord(
        a=a,
        b=b,
        factors=factors,
        norm_h=hinf_norm(factors.H, settings=quick, check_doubling=False).value,
        norm_u=hinf_norm(factors.U, settings=quick, check_doubling=False).value,
        norm_v=hinf_norm(factors.V, settings=quick, check_doubling=False).value,
    )


class BlockQ:
    """Ensemble Youla parameter: diagonal FIR entries plus scaled off-diagonals.

    ``off_coeffs[i, j]`` scales column j's diagonal entry into ``Q_ij``, so
    ``||Q_ij|| = |off_coeffs[i, j]| * ||Q_jj||`` exactly and the dominance
    level per column is the absolute column sum of the coefficients.
    """

    def __init__(
        self,
        diag_taps: np.ndarray,
        off_coeffs: np.ndarray | None = None,
        entry_costs: np.ndarray | None = None,
    ):
        taps = np.asarray(diag_taps, dtype=float)
        if taps.ndim != 2:
            raise ValueError("diag_taps must be (n, L)")
        self.diag_taps = taps
        n = taps.shape[0]
        if off_coeffs is not None:
            off_coeffs = np.asarray(off_coeffs, dtype=float)
            if off_coeffs.shape != (n, n):
                raise ValueError("off_coeffs must be (n, n)")
            if np.any(np.diag(off_coeffs) != 0.0):
                raise ValueError("off_coeffs must have a zero diagonal")
            if not np.any(off_coeffs):
                off_coeffs = None
        self.off_coeffs = off_coeffs
        self.entry_costs = entry_costs
        self._diag_norms: np.ndarray | None = None

    @property
    def n_agents(self) -> int:
        return self.diag_taps.shape[0]

    @property
    def fir_order(self) -> int:
        return self.diag_taps.shape[1]

    def is_diagonal(self) -> bool:
        return self.off_coeffs is None

    def entry(self, i: int, j: int) -> FirMatrix:
        """Materialize one block entry as a FirMatrix (zero when absent)."""
        if i == j:
            return FirMatrix(self.diag_taps[j].reshape(-1, 1, 1))
        coeff = 0.0 if self.off_coeffs is None else float(self.off_coeffs[i, j])
        return FirMatrix(coeff * self.diag_taps[j].reshape(-1, 1, 1))

    def eval_diag(self, lams: np.ndarray) -> np.ndarray:
        """Diagonal responses at the given points, shape (F, n)."""
        lams = np.asarray(lams, dtype=complex)
        powers = lams[:, None] ** np.arange(self.fir_order)[None, :]
        return powers @ self.diag_taps.T

    def diag_norms(self) -> np.ndarray:
        """H-infinity norm of every diagonal entry (cached)."""
        if self._diag_norms is None:
            self._diag_norms = _fir_column_norms(self.diag_taps)
        return self._diag_norms

    @property
    def gamma_q(self) -> float:
        return float(np.max(self.diag_norms()))

    @property
    def alpha_actual(self) -> float:
        """Smallest alpha for which every column is alpha-dominant."""
        if self.off_coeffs is None:
            return 0.0
        colsums = np.sum(np.abs(self.off_coeffs), axis=0)
        live = self.diag_norms() > 0.0
        dead_off = colsums[~live]
        if np.any(dead_off > 0.0):
            return np.inf  # off-diagonal mass over a zero-norm diagonal entry
        return float(np.max(colsums[live], initial=0.0))


def _fir_column_norms(taps: np.ndarray, n_grid: int = 512) -> np.ndarray:
    """H-infinity norms of scalar FIR rows of ``taps`` (n, L), with peak refine."""
    thetas = np.linspace(0.0, np.pi, n_grid)
    powers = lambda_grid(thetas)[:, None] ** np.arange(taps.shape[1])[None, :]
    mag = np.abs(powers @ taps.T)  # (F, n)
    best = np.max(mag, axis=0)
    peak = np.argmax(mag, axis=0)
    inner = (peak > 0) & (peak < n_grid - 1)
    if np.any(inner):
        idx = np.nonzero(inner)[0]
        k = peak[idx]
        s0, s1, s2 = mag[k - 1, idx], mag[k, idx], mag[k + 1, idx]
        denom = s0 - 2.0 * s1 + s2
        safe = denom < -1e-300
        h = thetas[1] - thetas[0]
        delta = np.where(safe, 0.5 * h * (s0 - s2) / np.where(safe, denom, 1.0), 0.0)
        theta_star = np.clip(thetas[k] + delta, thetas[k - 1], thetas[k + 1])
        powers_star = lambda_grid(theta_star)[:, None] ** np.arange(taps.shape[1])[None, :]
        refined = np.abs(np.einsum("nk,nk->n", powers_star, taps[idx]))
        best[idx] = np.maximum(best[idx], refined)
    return best


def selfish_Q(
    model: EnsembleModel,
    norm_kind: str = "hinf",
    block_kind: str = "two",
    fir_order: int | None = None,
    grid: FrequencyGrid | None = None,
) -> BlockQ:
    """Diagonal parameter whose entries solve each agent's matching problem."""
    solutions = solve_agent_problems(model, norm_kind, block_kind, fir_order, grid)
    length = max(sol.Z.length for sol in solutions)
    taps = np.zeros((model.n_agents, length))
    for i, sol in enumerate(solutions):
        taps[i, : sol.Z.length] = sol.Z.taps[:, 0, 0]
    return BlockQ(taps, None, entry_costs=np.array([s.cost for s in solutions]))


def solve_agent_problems(
    model: EnsembleModel,
    norm_kind: str = "hinf",
    block_kind: str = "two",
    fir_order: int | None = None,
    grid: FrequencyGrid | None = None,
) -> list[MatchingSolution]:
    return [
        solve(
            agent_problem(
                ag.factors,
                norm_kind,
                block_kind,
                fir_order or model.settings.fir_order,
                grid,
                settings=model.settings,
            )
        )
        for ag in model.agents
    ]


def make_alpha_dominant(
    q: BlockQ,
    profile: DominanceProfile | float,
    k: int | None = None,
    seed: int = 0,
    weight_mode: str = "nonnegative",
) -> BlockQ:
    """Spread column mass onto off-diagonal entries at the exact dominance level.

    For each column j, ``k`` random rows receive entries ``c_ij * Q_jj`` with
    ``sum_i |c_ij| = alpha(n)``, so the dominance level equals alpha exactly
    while every diagonal entry is retained unchanged.  ``weight_mode`` picks
    nonnegative or sign-randomized coefficients.
    """
    n = q.n_agents
    if not q.is_diagonal():
        raise ValueError("redistribution starts from a diagonal parameter")
    alpha = profile.alpha(n) if isinstance(profile, DominanceProfile) else float(profile)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if weight_mode not in ("nonnegative", "signed"):
        raise ValueError(f"unknown weight mode {weight_mode!r}")
    if alpha == 0.0:
        return BlockQ(q.diag_taps.copy(), None, q.entry_costs)
    fanout = n - 1 if k is None else int(k)
    if not 1 <= fanout <= n - 1:
        raise ValueError("fanout k must be in [1, n-1]")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    coeffs = np.zeros((n, n))
    others = np.arange(n)
    for j in range(n):
        pool = others[others != j]
        rows = pool if fanout == n - 1 else rng.choice(pool, size=fanout, replace=False)
        mags = rng.uniform(0.5, 1.5, size=fanout)
        mags *= alpha / mags.sum()
        if weight_mode == "signed":
            mags *= rng.integers(0, 2, size=fanout) * 2 - 1
        coeffs[rows, j] = mags
    return BlockQ(q.diag_taps.copy(), coeffs, q.entry_costs)


def check_dominance(q: BlockQ, alpha: float) -> tuple[bool, np.ndarray]:
    """Column test ``alpha ||Q_jj|| >= sum_i ||Q_ij||`` with per-column margins."""
    norms = q.diag_norms()
    if q.off_coeffs is None:
        off = np.zeros(q.n_agents)
    else:
        off = np.sum(np.abs(q.off_coeffs), axis=0) * norms
    margins = alpha * norms - off
    return bool(np.all(margins >= 0.0)), margins


def phi_at(model: EnsembleModel, q: BlockQ, lam: complex) -> np.ndarray:
    """Dense closed-loop assembly at one point (oracle path, O(n^2) blocks)."""
    n, pz, mw = model.n_agents, model.pz, model.mw
    lam_arr = np.array([lam], dtype=complex)
    h = [freq_response(ag.factors.H, lam) for ag in model.agents]
    u = [freq_response(ag.factors.U, lam) for ag in model.agents]
    v = [freq_response(ag.factors.V, lam) for ag in model.agents]
    qd = q.eval_diag(lam_arr)[0]
    mat = np.zeros((n * pz, n * mw), dtype=complex)
    for j in range(n):
        rows = slice(j * pz, (j + 1) * pz)
        cols = slice(j * mw, (j + 1) * mw)
        mat[rows, cols] = h[j] - u[j] @ (qd[j] * v[j])
    if q.off_coeffs is not None:
        nz_rows, nz_cols = np.nonzero(q.off_coeffs)
        for i, j in zip(nz_rows, nz_cols):
            mat[i * pz : (i + 1) * pz, j * mw : (j + 1) * mw] -= (
                q.off_coeffs[i, j] * qd[j] * (u[i] @ v[j])
            )
    return mat


def psi_at(model: EnsembleModel, q: BlockQ, lam: complex) -> np.ndarray:
    """Dense assembly with the averaging projector applied to the z-channel rows."""
    mat = phi_at(model, q, lam)
    z_rows = np.arange(model.n_agents) * model.pz
    mat[z_rows, :] -= mat[z_rows, :].mean(axis=0, keepdims=True)
    return mat


class _AverageTermEvaluator:
    """sigma_grid adapter for the M-row truncation of the ensemble-average term.

    The term is rank one per frequency, ``(1/n) 1_M [phibar_1 .. phibar_n]``,
    so its largest singular value is ``sqrt(M)/n`` times the Frobenius norm of
    the stacked column sums.
    """

    def __init__(self, model: EnsembleModel, q: BlockQ, m_rows: int):
        self.model = model
        self.q = q
        self.m_rows = m_rows

    def sigma_grid(self, thetas: np.ndarray) -> np.ndarray:
        bar = self.model.mean_term_rows(self.q, np.asarray(thetas, dtype=float))
        frob = np.sqrt(np.einsum("fnm->f", np.abs(bar) ** 2))
        return np.sqrt(self.m_rows) / self.model.n_agents * frob


def average_block_norm(
    model: EnsembleModel,
    q: BlockQ,
    m_rows: int,
    grid: FrequencyGrid | None = None,
    settings: GridSettings | None = None,
) -> float:
    """H-infinity norm of the M-row truncation of ``(1/n) 11^T Phi`` (z channel)."""
    if not 1 <= m_rows <= model.n_agents:
        raise ValueError("M must be in [1, n]")
    report = hinf_norm(_AverageTermEvaluator(model, q, m_rows), grid=grid, settings=settings)
    return report.value


def average_term_h2_scaled(model: EnsembleModel, q: BlockQ, n_grid: int = 2048) -> float:
    """Scaled H2 of the full ensemble-average term: (1/sqrt(n)) ||(1/n) 11^T Phi||_2."""
    ks = np.arange(n_grid // 2 + 1)
    thetas = 2.0 * np.pi * ks / n_grid
    weights = np.full(ks.size, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    bar = model.mean_term_rows(q, thetas)
    frob = np.einsum("fnm->f", np.abs(bar) ** 2)  # row energy per frequency
    # n identical rows of (1/n)[phibar_j]: squared H2 norm = (1/n) sum_j ||phibar_j||^2
    energy = float(np.sum(weights * frob) / n_grid) / model.n_agents
    return float(np.sqrt(energy / model.n_agents))


def lemma_bound_hinf(
    m_rows: int, n: int, gamma_h: float, gamma_q: float, gamma_u: float, gamma_v: float, alpha: float
) -> float:
    """Closed-form bound sqrt(M) [gamma_h + (1+alpha) gamma_Q gamma_u gamma_v] / sqrt(n)."""
    return float(
        np.sqrt(m_rows) * (gamma_h + (1.0 + alpha) * gamma_q * gamma_u * gamma_v) / np.sqrt(n)
    )


def lemma_bound_h2(n: int, gamma_u: float, gamma_q: float, alpha: float) -> float:
    """Per-term H2 bound gamma_u gamma_Q (1+alpha) / sqrt(n) for the UQ average term."""
    return float(gamma_u * gamma_q * (1.0 + alpha) / np.sqrt(n))


def lemma_bound_h2_total(
    n: int, gamma_h: float, gamma_u: float, gamma_q: float, gamma_v: float, alpha: float
) -> float:
    """Full closed-loop H2 bound [gamma_h + (1+alpha) gamma_u gamma_Q gamma_v] / sqrt(n)."""
    return float((gamma_h + (1.0 + alpha) * gamma_u * gamma_q * gamma_v) / np.sqrt(n))


# -- snapshots ------------------------------------------------------------


def save_snapshot(path: str, model: EnsembleModel, q: BlockQ | None = None, fmt: str = "json") -> None:
    """Serialize the population parameters (and optionally a BlockQ).

    JSON keeps exact float round-trips via repr; npz stores raw binary.  The
    factor triples are deterministic functions of (a, b, settings), so load
    rebuilds them bit-exactly.
    """
    if fmt == "json":
        payload: dict[str, Any] = {
            "seed": model.seed,
            "n": model.n_agents,
            "a": [ag.a for ag in model.agents],
            "b": [ag.b for ag in model.agents],
            "control_weight": model.settings.control_weight,
        }
        if q is not None:
            payload["diag_taps"] = q.diag_taps.tolist()
            payload["off_coeffs"] = None if q.off_coeffs is None else q.off_coeffs.tolist()
            payload["entry_costs"] = None if q.entry_costs is None else list(q.entry_costs)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    elif fmt == "npz":
        arrays: dict[str, Any] = {
            "seed": np.array(model.seed),
            "a": np.array([ag.a for ag in model.agents]),
            "b": np.array([ag.b for ag in model.agents]),
            "control_weight": np.array(model.settings.control_weight),
        }
        if q is not None:
            arrays["diag_taps"] = q.diag_taps
            if q.off_coeffs is not None:
                arrays["off_coeffs"] = q.off_coeffs
            if q.entry_costs is not None:
                arrays["entry_costs"] = np.asarray(q.entry_costs)
        np.savez(path, **arrays)
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")


def load_snapshot(
    path: str, settings: SynthesisSettings | None = None, fmt: str = "json"
) -> tuple[EnsembleModel, BlockQ | None]:
    if fmt == "json":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        a_vals, b_vals = payload["a"], payload["b"]
        seed = payload["seed"]
        cw = payload["control_weight"]
        diag = payload.get("diag_taps")
        off = payload.get("off_coeffs")
        costs = payload.get("entry_costs")
    elif fmt == "npz":
        data = np.load(path)
        a_vals, b_vals = data["a"], data["b"]
        seed = int(data["seed"])
        cw = float(data["control_weight"])
        diag = data["diag_taps"] if "diag_taps" in data else None
        off = data["off_coeffs"] if "off_coeffs" in data else None
        costs = data["entry_costs"] if "entry_costs" in data else None
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")
    settings = settings or SynthesisSettings(control_weight=float(cw))
    agents = [
        _record_for(float(a), float(b), factorize_agent(float(a), float(b), settings))
        for a, b in zip(a_vals, b_vals)
    ]
    model = EnsembleModel(agents, int(seed), settings)
    q = None
    if diag is not None:
        q = BlockQ(
            np.asarray(diag, dtype=float),
            None if off is None else np.asarray(off, dtype=float),
            None if costs is None else np.asarray(costs, dtype=float),
        )
    return model, q

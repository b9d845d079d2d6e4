"""Per-agent model matching over FIR-parametrized stable Z.

Each problem minimizes ``|| H - U Z V ||`` for scalar Z, either in H2 (linear
least squares on the taps) or H-infinity (Lawson-style iteratively reweighted
least squares over a frequency grid).  2-block problems stack the
control-penalty channel below the matched channel; when the supplied factors
carry no penalty rows, the stacked channel is the parameter itself
(``[H - U Z V; Z V]``).

Because Z is scalar, ``vec(H(lam) - U Z V)`` is affine in the taps through the
rank-one pattern ``vec(UV) * (powers . z)``, which reduces every weighted
least-squares step to a Toeplitz solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import GridSettings, SynthesisSettings
from .lti import FirMatrix, StateSpaceSystem, impulse_response, lambda_grid, static_gain
from .norms import CostReport, FrequencyGrid, _sigma_max_dense, hinf_norm
from .youla import YoulaFactors

__all__ = [
    "MatchingProblem",
    "MatchingSolution",
    "agent_problem",
    "solve",
    "solve_h2",
    "solve_hinf",
    "enforce_bound",
    "mu_sequence",
]


def _select_rows(sys: StateSpaceSystem, rows: list[int]) -> StateSpaceSystem:
    return StateSpaceSystem(sys.A, sys.B, sys.C[rows, :], sys.D[rows, :])


@dataclass(frozen=True)
class MatchingProblem:
    """One scalar-Z model-matching instance.

    ``h``: p x m matched factor, ``u``: p x 1, ``v``: 1 x m; each may be a
    StateSpaceSystem or FirMatrix.  ``has_penalty_rows`` records whether the
    rows of ``h``/``u`` already include the control-penalty channel; if not,
    2-block solves append the identity channel (0, -1) so the stack ends in
    ``Z V``.
    """

    h: Any
    u: Any
    v: Any
    norm_kind: str = "hinf"
    block_kind: str = "two"
    fir_order: int = 64
    grid: FrequencyGrid = field(default_factory=FrequencyGrid.default)
    gamma: float | None = None
    has_penalty_rows: bool = False
    settings: SynthesisSettings = field(default_factory=SynthesisSettings)

    def __post_init__(self) -> None:
        if self.norm_kind not in ("hinf", "h2"):
            raise ValueError(f"unknown norm kind {self.norm_kind!r}")
        if self.block_kind not in ("one", "two"):
            raise ValueError(f"unknown block kind {self.block_kind!r}")
        if self.fir_order < 1:
            raise ValueError("fir_order must be >= 1")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma bound must be positive")

    def _stacked(self) -> tuple[list[Any], list[Any]]:
        """Row sources for the objective: (h parts, u parts)."""
        h_parts, u_parts = [self.h], [self.u]
        if self.block_kind == "two" and not self.has_penalty_rows:
            m = _cols(self.v)
            h_parts.append(static_gain(np.zeros((1, m))))
            u_parts.append(static_gain([[-1.0]]))
        return h_parts, u_parts

    def error_evaluator(self, taps: np.ndarray) -> "_ErrorEvaluator":
        return _ErrorEvaluator(self, np.asarray(taps, dtype=float).ravel())

    def tables(self, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(vec H, vec U@V) per frequency for the stacked objective."""
        lams = lambda_grid(thetas)
        h_parts, u_parts = self._stacked()
        h = np.concatenate([p.response_grid(lams) for p in h_parts], axis=1)
        u = np.concatenate([p.response_grid(lams) for p in u_parts], axis=1)
        v = self.v.response_grid(lams)
        uv = np.einsum("fpo,fom->fpm", u, v)
        f = thetas.size
        return h.reshape(f, -1), uv.reshape(f, -1)


def _cols(evaluator: Any) -> int:
    if isinstance(evaluator, StateSpaceSystem):
        return evaluator.n_inputs
    if isinstance(evaluator, FirMatrix):
        return evaluator.shape[1]
    raise TypeError(f"unsupported factor type {type(evaluator)!r}")


def _rows(evaluator: Any) -> int:
    if isinstance(evaluator, StateSpaceSystem):
        return evaluator.n_outputs
    if isinstance(evaluator, FirMatrix):
        return evaluator.shape[0]
    raise TypeError(f"unsupported factor type {type(evaluator)!r}")


class _ErrorEvaluator:
    """Evaluates ``E(lam) = H(lam) - U(lam) Z(lam) V(lam)`` for fixed taps."""

    def __init__(self, problem: MatchingProblem, taps: np.ndarray) -> None:
        self.problem = problem
        self.taps = taps
        h_parts, _ = problem._stacked()
        self.p = sum(_rows(x) for x in h_parts)
        self.m = _cols(problem.v)

    def response_grid(self, lams: np.ndarray) -> np.ndarray:
        # map each point to the upper semicircle; real coefficients make the
        # singular values conjugate-symmetric
        thetas = np.abs(np.angle(np.conj(np.asarray(lams, dtype=complex))))
        h, uv = self.problem.tables(thetas)
        lams_u = lambda_grid(thetas)
        z = (lams_u[:, None] ** np.arange(self.taps.size)[None, :]) @ self.taps
        e = h - z[:, None] * uv
        return e.reshape(-1, self.p, self.m)


@dataclass
class MatchingSolution:
    """Solver output: taps, achieved cost, and convergence evidence."""

    Z: FirMatrix
    cost: float
    cost_zero: float
    per_frequency: np.ndarray
    iterations: int
    certificate_gap: float
    converged: bool
    gamma: float
    bound_active: bool
    norm_kind: str
    block_kind: str
    meta: dict[str, Any] = field(default_factory=dict)


def agent_problem(
    factors: YoulaFactors,
    norm_kind: str = "hinf",
    block_kind: str = "two",
    fir_order: int | None = None,
    grid: FrequencyGrid | None = None,
    gamma: float | None = None,
    settings: SynthesisSettings | None = None,
) -> MatchingProblem:
    """Build the matching problem for one agent's factor triple.

    1-block matches the deviation row alone; 2-block includes the plant's
    control-penalty row, so no identity channel is appended.
    """
    settings = settings or SynthesisSettings()
    if block_kind == "one":
        h, u = _select_rows(factors.H, [0]), _select_rows(factors.U, [0])
        has_penalty = False
    else:
        h, u = factors.H, factors.U
        has_penalty = True
    return MatchingProblem(
        h=h,
        u=u,
        v=factors.V,
        norm_kind=norm_kind,
        block_kind=block_kind,
        fir_order=fir_order or settings.fir_order,
        grid=grid or FrequencyGrid.default(),
        gamma=gamma,
        has_penalty_rows=has_penalty,
        settings=settings,
    )


def enforce_bound(z: FirMatrix, gamma: float) -> FirMatrix:
    """Scale Z down so its H-infinity norm respects the bound; no-op if inside."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    norm = hinf_norm(z, check_doubling=False).value
    if norm <= gamma:
        return z
    return z.scaled(gamma / norm)


def _fir_taps(evaluator: Any, tail_rtol: float) -> np.ndarray:
    """Impulse-response taps of a factor, extended until the tail is negligible."""
    if isinstance(evaluator, FirMatrix):
        return evaluator.taps
    length = 128
    for _ in range(10):
        fir, tail = impulse_response(evaluator, length)
        energy = float(np.sum(fir.taps**2))
        if tail**2 <= tail_rtol * max(energy, 1e-300):
            return fir.taps
        length *= 2
    raise ValueError("factor impulse response does not decay; check stability")


def solve_h2(problem: MatchingProblem) -> MatchingSolution:
    """Global FIR-restricted optimum of the quadratic tap objective.

    Taps solve an ordinary least-squares system assembled from the factor
    impulse responses; rank deficiency falls back to a ridge solve with a
    warning.
    """
    if problem.norm_kind != "h2":
        raise ValueError("solve_h2 requires an H2 problem")
    tail = problem.settings.tail_rtol
    h_parts, u_parts = problem._stacked()
    h_taps = [_fir_taps(x, tail) for x in h_parts]
    u_taps = [_fir_taps(x, tail) for x in u_parts]
    v_taps = _fir_taps(problem.v, tail)
    length = problem.fir_order

    w_rows = []
    for ut in u_taps:
        lw = ut.shape[0] + v_taps.shape[0] - 1
        w = np.zeros((lw, ut.shape[1], v_taps.shape[2]))
        for s in range(ut.shape[0]):
            w[s : s + v_taps.shape[0]] += np.einsum("po,kom->kpm", ut[s], v_taps)
        w_rows.append(w)

    n_e = max(
        max(ht.shape[0] for ht in h_taps),
        max(w.shape[0] for w in w_rows) + length - 1,
    )
    p_tot = sum(ht.shape[1] for ht in h_taps)
    m = v_taps.shape[2]

    b = np.zeros((n_e, p_tot, m))
    row0 = 0
    for ht in h_taps:
        b[: ht.shape[0], row0 : row0 + ht.shape[1], :] = ht
        row0 += ht.shape[1]
    design = np.zeros((n_e, p_tot, m, length))
    row0 = 0
    for w in w_rows:
        p = w.shape[1]
        for t in range(length):
            design[t : t + w.shape[0], row0 : row0 + p, :, t] = w
        row0 += p
    a_mat = design.reshape(-1, length)
    b_vec = b.reshape(-1)

    taps, _, rank, _ = np.linalg.lstsq(a_mat, b_vec, rcond=None)
    meta: dict[str, Any] = {"rank": int(rank), "rows": a_mat.shape[0]}
    if rank < length:
        warnings.warn("rank-deficient normal equations; using ridge 1e-10", stacklevel=2)
        gram = a_mat.T @ a_mat + 1e-10 * np.eye(length)
        taps = np.linalg.solve(gram, a_mat.T @ b_vec)
        meta["ridge"] = 1e-10
    rhs = a_mat.T @ b_vec
    normal_residual = float(
        np.linalg.norm(a_mat.T @ (a_mat @ taps) - rhs) / max(1.0, np.linalg.norm(rhs))
    )
    meta["normal_residual"] = normal_residual

    z = FirMatrix(taps.reshape(-1, 1, 1))
    gamma = problem.gamma
    z_norm = hinf_norm(z, check_doubling=False).value
    bound_active = gamma is not None and z_norm > gamma
    if bound_active:
        z = enforce_bound(z, gamma)
        taps = z.taps.ravel()
    if gamma is None:
        gamma = problem.settings.gamma_scale * max(z_norm, 1e-300)

    residual = b_vec - a_mat @ taps
    cost = float(np.linalg.norm(residual))
    cost_zero = float(np.linalg.norm(b_vec))
    per_tap_cost = residual.reshape(n_e, p_tot, m)
    return MatchingSolution(
        Z=z,
        cost=cost,
        cost_zero=cost_zero,
        per_frequency=np.sqrt(np.sum(per_tap_cost**2, axis=(1, 2))),
        iterations=1,
        certificate_gap=0.0,
        converged=True,
        gamma=float(gamma),
        bound_active=bound_active,
        norm_kind="h2",
        block_kind=problem.block_kind,
        meta=meta,
    )


def _weighted_toeplitz_solve(
    cos_t: np.ndarray, sin_t: np.ndarray, w: np.ndarray, g: np.ndarray, beta: np.ndarray
) -> np.ndarray:
    """Solve the rank-one weighted least-squares normal equations for the taps."""
    wg = w * g
    col = cos_t.T @ wg  # Toeplitz first column: sum_f w g cos(d theta)
    rhs = cos_t.T @ (w * beta.real) - sin_t.T @ (w * beta.imag)
    length = cos_t.shape[1]
    idx = np.abs(np.arange(length)[:, None] - np.arange(length)[None, :])
    gram = col[idx]
    gram = gram + 1e-12 * max(col[0], 1e-300) * np.eye(length)
    return np.linalg.solve(gram, rhs)


def solve_hinf(problem: MatchingProblem) -> MatchingSolution:
    """Minimax over the grid of the largest singular value of the stack.

    Lawson reweighting with damped multiplicative weight updates; terminates
    when the max-cost change falls below the relative tolerance.  The reported
    cost comes from the refined (and doubling-checked) grid; if the doubled
    grid moves the cost by more than the grid tolerance the solve re-runs on
    the finer grid.
    """
    if problem.norm_kind != "hinf":
        raise ValueError("solve_hinf requires an H-infinity problem")
    s = problem.settings
    grid = problem.grid
    meta: dict[str, Any] = {}
    for refinement in range(3):
        taps, info = _lawson(problem, grid)
        evaluator = problem.error_evaluator(taps)
        report = hinf_norm(
            evaluator, grid=grid, settings=GridSettings(n_points=grid.n_points)
        )
        meta.update(info)
        meta["doubling_rel_change"] = report.meta.get("doubling_rel_change", 0.0)
        meta["grid_points"] = grid.n_points
        if report.meta.get("doubling_rel_change", 0.0) <= 0.005:
            break
        grid = grid.doubled()
        meta["regrid"] = refinement + 1
    cost = report.value

    z = FirMatrix(taps.reshape(-1, 1, 1))
    z_norm = hinf_norm(z, check_doubling=False).value
    gamma = problem.gamma
    bound_active = gamma is not None and z_norm > gamma
    if bound_active:
        z = enforce_bound(z, gamma)
        taps = z.taps.ravel()
        report = hinf_norm(problem.error_evaluator(taps), grid=grid)
        cost = report.value
    if gamma is None:
        gamma = s.gamma_scale * max(z_norm, 1e-300)

    h_tab, uv_tab = problem.tables(grid.thetas)
    cost_zero = float(np.max(_sigma_profile(h_tab, problem)))
    profile = _sigma_profile(
        h_tab - ((lambda_grid(grid.thetas)[:, None] ** np.arange(taps.size)[None, :]) @ taps)[:, None] * uv_tab,
        problem,
    )
    weights = info["weights"]
    gap = max(float(np.max(profile) - np.sum(weights * profile)), 0.0)
    return MatchingSolution(
        Z=z,
        cost=cost,
        cost_zero=cost_zero,
        per_frequency=profile,
        iterations=info["iterations"],
        certificate_gap=gap,
        converged=info["converged"],
        gamma=float(gamma),
        bound_active=bound_active,
        norm_kind="hinf",
        block_kind=problem.block_kind,
        meta=meta,
    )


def _sigma_profile(vecs: np.ndarray, problem: MatchingProblem) -> np.ndarray:
    h_parts, _ = problem._stacked()
    p = sum(_rows(x) for x in h_parts)
    m = _cols(problem.v)
    return _sigma_max_dense(vecs.reshape(-1, p, m))


def _lawson(problem: MatchingProblem, grid: FrequencyGrid) -> tuple[np.ndarray, dict[str, Any]]:
    s = problem.settings
    thetas = grid.thetas
    h_tab, uv_tab = problem.tables(thetas)
    length = problem.fir_order
    t_idx = np.arange(length)
    cos_t = np.cos(thetas[:, None] * t_idx[None, :])
    sin_t = np.sin(thetas[:, None] * t_idx[None, :])
    g = np.sum(np.abs(uv_tab) ** 2, axis=1)
    beta = np.einsum("fp,fp->f", np.conj(uv_tab), h_tab)
    powers = lambda_grid(thetas)[:, None] ** t_idx[None, :]

    w = np.full(thetas.size, 1.0 / thetas.size)
    best_cost = np.inf
    best_taps = np.zeros(length)
    best_w = w.copy()
    prev_cost = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, s.lawson_max_iter + 1):
        taps = _weighted_toeplitz_solve(cos_t, sin_t, w, g, beta)
        z_vals = powers @ taps
        profile = _sigma_profile(h_tab - z_vals[:, None] * uv_tab, problem)
        cost = float(np.max(profile))
        if cost < best_cost:
            best_cost, best_taps, best_w = cost, taps, w.copy()
        if abs(cost - prev_cost) <= s.lawson_tol * max(cost, 1e-300):
            converged = True
            break
        prev_cost = cost
        w = w * np.maximum(profile, 1e-300) ** s.lawson_damping
        w /= w.sum()
    return best_taps, {
        "iterations": iterations,
        "converged": converged,
        "weights": best_w,
        "lawson_cost": best_cost,
    }


def solve(problem: MatchingProblem) -> MatchingSolution:
    return solve_h2(problem) if problem.norm_kind == "h2" else solve_hinf(problem)


def mu_sequence(
    agents: list[YoulaFactors],
    norm_kind: str = "hinf",
    block_kind: str = "two",
    fir_order: int | None = None,
    grid: FrequencyGrid | None = None,
    settings: SynthesisSettings | None = None,
    solutions: list[MatchingSolution] | None = None,
) -> tuple[np.ndarray, list[MatchingSolution]]:
    """Decentralized optimum over the first M agents, for M = 1..n.

    Diagonal factors make the joint problem separable: the H-infinity value is
    the running max of per-agent costs, the scaled H2 value the root mean
    square.  Pass precomputed ``solutions`` to skip re-solving.
    """
    if solutions is None:
        solutions = [
            solve(agent_problem(f, norm_kind, block_kind, fir_order, grid, settings=settings))
            for f in agents
        ]
    costs = np.array([sol.cost for sol in solutions])
    if norm_kind == "hinf":
        mus = np.maximum.accumulate(costs)
    else:
        mus = np.sqrt(np.cumsum(costs**2) / np.arange(1, costs.size + 1))
    return mus, solutions

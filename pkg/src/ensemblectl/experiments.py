"""Experiment drivers behind the CLI: scaling study, lemma-decay study,
trajectory simulation, and single-agent matching reports.

Every driver is deterministic under a fixed config seed: populations use
per-agent spawned streams (so the n-lists share prefixes), redistribution and
noise use named child seeds, and CSV cells are written with round-trip float
formatting.  Wall times are zeroed in CSV rows when the deterministic flag is
set; real timings always land in the manifest.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path
from typing import Any

import numpy as np

from .config import DominanceProfile, ExperimentConfig
from .ensemble import (
    BlockQ,
    EnsembleModel,
    average_block_norm,
    average_term_h2_scaled,
    lemma_bound_h2_total,
    lemma_bound_hinf,
    make_alpha_dominant,
    sample_population,
    selfish_Q,
    solve_agent_problems,
)
from .lti import simulate
from .matching import agent_problem, solve
from .norms import FrequencyGrid, social_cost
from .reporting import fit_loglog_slope, scaling_trend_checks, write_csv, write_manifest
from .youla import controller_from_Q, factorize_agent

SCALING_HEADER = [
    "n",
    "cost_selfish",
    "cost_compliant",
    "cost_violating",
    "alpha_compliant",
    "alpha_violating",
    "wall_time_s",
    "seed",
    "error",
]

DECAY_HEADER = [
    "profile_exponent",
    "profile_coefficient",
    "n",
    "m_trunc",
    "alpha",
    "measured_hinf",
    "bound_hinf",
    "measured_h2",
    "bound_h2",
    "seed",
]

TRAJECTORY_HEADER = ["step", "agent", "y", "seed"]
INPUT_HEADER = ["step", "agent", "w", "v"]

# child-seed tags keep the per-purpose random streams independent
_TAG_COMPLIANT = 1
_TAG_VIOLATING = 2
_TAG_NOISE = 3


def child_seed(seed: int, tag: int, index: int) -> int:
    return int(np.random.SeedSequence((seed, tag, index)).generate_state(1)[0])


def _log(message: str, verbose: bool) -> None:
    if verbose:
        print(message, file=sys.stderr, flush=True)


def _grid(config: ExperimentConfig) -> FrequencyGrid:
    return FrequencyGrid.default(config.grid.n_points)


def _prefix_q(q: BlockQ, n: int) -> BlockQ:
    costs = None if q.entry_costs is None else np.asarray(q.entry_costs)[:n]
    return BlockQ(q.diag_taps[:n], None, costs)


def _solve_population(
    config: ExperimentConfig, n: int, verbose: bool
) -> tuple[EnsembleModel, BlockQ]:
    t0 = time.perf_counter()
    model = sample_population(n, config.seed, config.synthesis)
    _log(f"factorized {n} agents in {time.perf_counter() - t0:.1f}s", verbose)
    t0 = time.perf_counter()
    q = selfish_Q(model, config.norm, config.block, config.synthesis.fir_order, _grid(config))
    _log(f"solved {n} matching problems in {time.perf_counter() - t0:.1f}s", verbose)
    return model, q


def run_scaling(config: ExperimentConfig, out_dir: str | Path, verbose: bool = True) -> dict[str, Any]:
    """Table-style scaling study: selfish vs compliant vs violating social cost.

    Returns a dict with the records, file paths, trend-check results, and the
    exit code (0 ok, 2 soft trend-check failure).
    """
    out_dir = Path(out_dir)
    n_max = max(config.n_list)
    model_full, q_full = _solve_population(config, n_max, verbose)
    records: list[dict[str, Any]] = []
    wall_times: dict[str, float] = {}
    doubling_shifts: dict[str, float] = {}
    for n in config.n_list:
        t0 = time.perf_counter()
        row: dict[str, Any] = {"n": n, "seed": config.seed, "error": ""}
        try:
            model = model_full if n == n_max else model_full.truncate(n)
            q_selfish = _prefix_q(q_full, n)
            q_compliant = make_alpha_dominant(
                q_selfish,
                config.compliant,
                k=config.fanout,
                seed=child_seed(config.seed, _TAG_COMPLIANT, n),
                weight_mode=config.weight_mode,
            )
            q_violating = make_alpha_dominant(
                q_selfish,
                config.violating,
                k=config.fanout,
                seed=child_seed(config.seed, _TAG_VIOLATING, n),
                weight_mode=config.weight_mode,
            )
            grid, gs = _grid(config), config.grid
            reports = {
                "cost_selfish": social_cost(model, q_selfish, config.norm, config.block, grid, gs),
                "cost_compliant": social_cost(model, q_compliant, config.norm, config.block, grid, gs),
                "cost_violating": social_cost(model, q_violating, config.norm, config.block, grid, gs),
            }
            for key, report in reports.items():
                row[key] = report.value
                doubling_shifts[f"{key}[n={n}]"] = report.meta.get("doubling_rel_change", 0.0)
            row["alpha_compliant"] = q_compliant.alpha_actual
            row["alpha_violating"] = q_violating.alpha_actual
        except Exception as exc:  # noqa: BLE001 - row-level fault isolation
            row["error"] = f"{type(exc).__name__}: {exc}"
            row.setdefault("cost_selfish", float("nan"))
            row.setdefault("cost_compliant", float("nan"))
            row.setdefault("cost_violating", float("nan"))
            row.setdefault("alpha_compliant", float("nan"))
            row.setdefault("alpha_violating", float("nan"))
        elapsed = time.perf_counter() - t0
        wall_times[f"n={n}"] = elapsed
        row["wall_time_s"] = 0.0 if config.deterministic else elapsed
        records.append(row)
        _log(
            f"n={n}: selfish={row['cost_selfish']:.4f} compliant={row['cost_compliant']:.4f} "
            f"violating={row['cost_violating']:.4f} ({elapsed:.1f}s)",
            verbose,
        )
    csv_path = write_csv(
        out_dir / "scaling.csv",
        SCALING_HEADER,
        [[r[k] for k in SCALING_HEADER] for r in records],
    )
    checks = scaling_trend_checks(records)
    max_shift = max(doubling_shifts.values(), default=0.0)
    manifest = write_manifest(
        csv_path,
        config,
        {
            "experiment": "scaling",
            "wall_times_s": wall_times,
            "max_doubling_shift": max_shift,
            "trend_checks": [{"name": n, "passed": bool(p), "detail": d} for n, p, d in checks],
        },
    )
    for name, passed, detail in checks:
        _log(f"trend {name}: {'ok' if passed else 'FAILED'} ({detail})", verbose)
    exit_code = 0 if all(p for _, p, _ in checks) else 2
    return {
        "records": records,
        "csv": csv_path,
        "manifest": manifest,
        "checks": checks,
        "doubling_shifts": doubling_shifts,
        "exit_code": exit_code,
    }


def run_lemma_decay(config: ExperimentConfig, out_dir: str | Path, verbose: bool = True) -> dict[str, Any]:
    """Mean-field residual decay: measured truncated-average norms vs bounds."""
    out_dir = Path(out_dir)
    if any(m > min(config.n_list) for m in config.m_list):
        raise ValueError("every truncation M must be <= min(n_list)")
    n_max = max(config.n_list)
    model_full, q_full = _solve_population(config, n_max, verbose)
    rows: list[list[Any]] = []
    slopes: dict[str, float] = {}
    measured_by_profile: dict[float, dict[str, list[float]]] = {}
    grid, gs = _grid(config), config.grid
    for exponent in config.decay_exponents:
        profile = DominanceProfile(1.0, exponent)
        series: dict[str, list[float]] = {"n": [], "hinf": [], "h2": []}
        for n in config.n_list:
            model = model_full if n == n_max else model_full.truncate(n)
            q_diag = _prefix_q(q_full, n)
            alpha = profile.alpha(n)
            q = make_alpha_dominant(
                q_diag,
                profile,
                k=None if config.decay_fanout is None else min(config.decay_fanout, n - 1),
                seed=child_seed(config.seed, _TAG_COMPLIANT, 10_000 + n),
                weight_mode=config.decay_weight_mode,
            )
            gamma_q = q.gamma_q
            measured_h2 = average_term_h2_scaled(model, q)
            bound_h2 = lemma_bound_h2_total(
                n, model.gamma_h, model.gamma_u, gamma_q, model.gamma_v, alpha
            )
            for m_trunc in config.m_list:
                measured = average_block_norm(model, q, m_trunc, grid, gs)
                bound = lemma_bound_hinf(
                    m_trunc, n, model.gamma_h, gamma_q, model.gamma_u, model.gamma_v, alpha
                )
                rows.append(
                    [exponent, profile.coefficient, n, m_trunc, alpha,
                     measured, bound, measured_h2, bound_h2, config.seed]
                )
                if m_trunc == config.m_list[0]:
                    series["n"].append(n)
                    series["hinf"].append(measured)
                    series["h2"].append(measured_h2)
            _log(f"decay p={exponent} n={n}: hinf={series['hinf'][-1]:.5f} h2={series['h2'][-1]:.5f}", verbose)
        slopes[f"hinf_p={exponent}"] = fit_loglog_slope(series["n"], series["hinf"])
        slopes[f"h2_p={exponent}"] = fit_loglog_slope(series["n"], series["h2"])
        measured_by_profile[exponent] = series
    csv_path = write_csv(out_dir / "lemma_decay.csv", DECAY_HEADER, rows)
    manifest = write_manifest(
        csv_path, config, {"experiment": "lemma-decay", "fitted_slopes": slopes}
    )
    for name, slope in slopes.items():
        _log(f"slope {name}: {slope:.3f}", verbose)
    return {
        "rows": rows,
        "csv": csv_path,
        "manifest": manifest,
        "slopes": slopes,
        "series": measured_by_profile,
        "exit_code": 0,
    }


def closed_loop_rollout(
    plant,
    controller,
    w_noise: np.ndarray,
    v_signal: np.ndarray,
    reference: np.ndarray | None = None,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    """Step one agent's loop: ``u = K(y - r)`` with ``y = C_y x + D_yw [w; v]``.

    Returns the measurement trajectory.  Raises OverflowError when the state
    leaves a generous numeric envelope.
    """
    horizon = w_noise.size
    reference = np.zeros(horizon) if reference is None else reference
    x = np.zeros(plant.n_states) if x0 is None else np.asarray(x0, dtype=float).copy()
    xk = np.zeros(controller.n_states)
    y_out = np.empty(horizon)
    for k in range(horizon):
        dist = np.array([w_noise[k], v_signal[k]])
        y = (plant.C_y @ x + plant.D_yw @ dist).item()
        fed = y - reference[k]
        u = (controller.C @ xk).item() + controller.D.item() * fed
        y_out[k] = y
        xk = controller.A @ xk + controller.B[:, 0] * fed
        x = plant.A @ x + plant.B_w @ dist + plant.B_u[:, 0] * u
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e12:
            raise OverflowError(f"state diverged at step {k}")
    return y_out


def run_simulation(config: ExperimentConfig, out_dir: str | Path, verbose: bool = True) -> dict[str, Any]:
    """Closed-loop trajectories: common sinusoid plus per-agent Gaussian noise.

    Each agent runs its selfish controller.  The sinusoid enters on the
    measurement channel by default, or as a tracking reference with
    ``sine_mode='reference'``.
    """
    out_dir = Path(out_dir)
    n = config.sim_n
    model, q = _solve_population(config, n, verbose)
    horizon = config.horizon
    steps = np.arange(horizon)
    sine = config.sine_amplitude * np.sin(2.0 * np.pi * steps / config.sine_period)
    traj_rows: list[list[Any]] = []
    input_rows: list[list[Any]] = []
    overflow_agents: list[int] = []
    for i, agent in enumerate(model.agents):
        controller = controller_from_Q(agent.factors, q.entry(i, i).as_statespace())
        rng = np.random.default_rng(child_seed(config.seed, _TAG_NOISE, i))
        w_noise = rng.normal(0.0, config.noise_std, size=horizon)
        v_signal = sine if config.sine_mode == "v-channel" else np.zeros(horizon)
        reference = sine if config.sine_mode == "reference" else None
        try:
            y_out = closed_loop_rollout(agent.factors.plant, controller, w_noise, v_signal, reference)
        except OverflowError:
            overflow_agents.append(i)
            continue
        for k in range(horizon):
            traj_rows.append([k, i, y_out[k], config.seed])
            input_rows.append([k, i, w_noise[k], v_signal[k]])
    csv_path = write_csv(out_dir / "trajectories.csv", TRAJECTORY_HEADER, traj_rows)
    inputs_path = write_csv(out_dir / "trajectories_inputs.csv", INPUT_HEADER, input_rows)
    manifest = write_manifest(
        csv_path,
        config,
        {"experiment": "simulate", "overflow_agents": overflow_agents, "inputs_csv": str(inputs_path)},
    )
    write_manifest(inputs_path, config, {"experiment": "simulate", "trajectories_csv": str(csv_path)})
    return {
        "csv": csv_path,
        "inputs_csv": inputs_path,
        "manifest": manifest,
        "overflow_agents": overflow_agents,
        "exit_code": 0 if not overflow_agents else 2,
    }


def run_matching(
    a: float,
    b: float,
    config: ExperimentConfig,
    out_dir: str | Path,
    verbose: bool = True,
) -> dict[str, Any]:
    """Single-agent matching report: cost, certificate gap, and the taps."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    factors = factorize_agent(a, b, config.synthesis)
    problem = agent_problem(
        factors,
        config.norm,
        config.block,
        config.synthesis.fir_order,
        _grid(config),
        settings=config.synthesis,
    )
    solution = solve(problem)
    report_path = out_dir / f"matching_a{a:g}_b{b:g}.txt"
    lines = [
        f"a = {a!r}",
        f"b = {b!r}",
        f"norm = {config.norm}",
        f"block = {config.block}",
        f"fir_order = {problem.fir_order}",
        f"cost = {solution.cost!r}",
        f"cost_at_zero = {solution.cost_zero!r}",
        f"certificate_gap = {solution.certificate_gap!r}",
        f"iterations = {solution.iterations}",
        f"converged = {solution.converged}",
        f"gamma = {solution.gamma!r}",
        f"bound_active = {solution.bound_active}",
        "z_taps = " + ",".join(repr(t) for t in solution.Z.taps.ravel()),
    ]
    report_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = write_manifest(report_path, config, {"experiment": "matching"})
    _log(f"matching a={a} b={b}: cost {solution.cost:.6f} (zero: {solution.cost_zero:.6f})", verbose)
    return {
        "solution": solution,
        "report": report_path,
        "manifest": manifest,
        "exit_code": 0 if solution.converged else 2,
    }

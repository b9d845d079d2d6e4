import numpy as np
import pytest

from ensemblectl.config import SynthesisSettings
from ensemblectl.lti import FirMatrix, static_gain
from ensemblectl.matching import (
    MatchingProblem,
    agent_problem,
    enforce_bound,
    mu_sequence,
    solve,
    solve_h2,
    solve_hinf,
)
from ensemblectl.norms import FrequencyGrid, hinf_norm
from ensemblectl.youla import factorize_agent


def static_problem(norm_kind, block_kind, h=2.0, gamma=None, fir_order=8):
    return MatchingProblem(
        h=static_gain(h), u=static_gain(1.0), v=static_gain(1.0),
        norm_kind=norm_kind, block_kind=block_kind, fir_order=fir_order, gamma=gamma,
    )


def random_bounded_fir(rng, length, bound):
    taps = rng.standard_normal(length)
    fir = FirMatrix(taps.reshape(-1, 1, 1))
    norm = hinf_norm(fir, check_doubling=False).value
    if norm > bound:
        fir = fir.scaled(bound / norm)
    return fir


def cost_of(problem, fir):
    return hinf_norm(problem.error_evaluator(fir.taps.ravel()), check_doubling=False).value


# -- H2 ----------------------------------------------------------------------


def test_h2_static_exact_match():
    sol = solve_h2(static_problem("h2", "one", fir_order=4))
    assert sol.cost == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(sol.Z.taps.ravel(), [2, 0, 0, 0], atol=1e-12)


def test_h2_delay_unmatchable_feedthrough():
    problem = MatchingProblem(
        h=FirMatrix(np.array([1.0, 1.0])), u=FirMatrix(np.array([0.0, 1.0])),
        v=static_gain(1.0), norm_kind="h2", block_kind="one", fir_order=8,
    )
    sol = solve_h2(problem)
    assert sol.cost == pytest.approx(1.0, abs=1e-9)
    assert sol.Z.taps.ravel()[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.meta["normal_residual"] <= 1e-9


def test_h2_beats_random_candidates():
    factors = factorize_agent(1.1, 0.9)
    problem = agent_problem(factors, "h2", "two", fir_order=32)
    sol = solve_h2(problem)
    rng = np.random.default_rng(0)
    for _ in range(100):
        cand = random_bounded_fir(rng, 32, 2.0 * sol.gamma)
        assert _h2_cost(problem, cand) >= sol.cost - 1e-9


def _h2_cost(problem, fir):
    # tap-domain objective, assembled independently of the solver path
    from ensemblectl.matching import _fir_taps

    tail = problem.settings.tail_rtol
    h_parts, u_parts = problem._stacked()
    v_taps = _fir_taps(problem.v, tail)
    total = 0.0
    length = fir.length
    for h_part, u_part in zip(h_parts, u_parts):
        ht = _fir_taps(h_part, tail)
        ut = _fir_taps(u_part, tail)
        lw = ut.shape[0] + v_taps.shape[0] - 1
        w = np.zeros((lw, ut.shape[1], v_taps.shape[2]))
        for s in range(ut.shape[0]):
            w[s : s + v_taps.shape[0]] += np.einsum("po,kom->kpm", ut[s], v_taps)
        n_e = max(ht.shape[0], lw + length - 1)
        e = np.zeros((n_e, ht.shape[1], v_taps.shape[2]))
        e[: ht.shape[0]] = ht
        for t in range(length):
            e[t : t + lw] -= fir.taps[t, 0, 0] * w
        total += float(np.sum(e**2))
    return float(np.sqrt(total))


def test_h2_first_order_optimality():
    factors = factorize_agent(0.9, 1.1)
    problem = agent_problem(factors, "h2", "one", fir_order=16)
    sol = solve_h2(problem)
    base = _h2_cost(problem, sol.Z)
    rng = np.random.default_rng(1)
    for _ in range(20):
        t = rng.integers(0, 16)
        for sign in (+1.0, -1.0):
            taps = sol.Z.taps.copy()
            taps[t, 0, 0] += sign * 1e-4
            assert _h2_cost(problem, FirMatrix(taps)) >= base - 1e-12


# -- H-infinity ---------------------------------------------------------------


def test_hinf_static_two_block():
    sol = solve_hinf(static_problem("hinf", "two"))
    assert sol.cost == pytest.approx(np.sqrt(2.0), abs=1e-6)
    assert sol.Z.taps.ravel()[0] == pytest.approx(1.0, abs=1e-6)


def test_hinf_static_bounded_one_block():
    sol = solve_hinf(static_problem("hinf", "one", gamma=1.0))
    assert sol.bound_active
    assert sol.cost == pytest.approx(1.0, abs=1e-6)
    assert sol.Z.taps.ravel()[0] == pytest.approx(1.0, abs=1e-6)


def test_hinf_interpolation_constraint_floor():
    # U has a unit-circle zero at lam = 1, so no Z can beat |H(1)|
    h = FirMatrix(np.array([1.0, 0.5]))
    u = FirMatrix(np.array([1.0, -1.0]))  # 1 - lam
    floor = abs(1.0 + 0.5)  # H(1)
    costs = []
    for length in (8, 16, 32):
        problem = MatchingProblem(
            h=h, u=u, v=static_gain(1.0), norm_kind="hinf", block_kind="one", fir_order=length
        )
        sol = solve_hinf(problem)
        assert sol.cost >= floor - 1e-8
        costs.append(sol.cost)
    assert costs[-1] <= costs[0] + 1e-6


def test_hinf_beats_random_candidates():
    factors = factorize_agent(1.2, 1.0)
    problem = agent_problem(factors, "hinf", "two", fir_order=24)
    sol = solve_hinf(problem)
    rng = np.random.default_rng(2)
    for _ in range(100):
        cand = random_bounded_fir(rng, 24, 2.0 * sol.gamma)
        assert cost_of(problem, cand) >= sol.cost - 1e-9


def test_hinf_cost_not_above_zero_candidate():
    factors = factorize_agent(1.4, 0.9)
    for block in ("one", "two"):
        problem = agent_problem(factors, "hinf", block, fir_order=24)
        sol = solve_hinf(problem)
        assert sol.cost <= sol.cost_zero + 1e-9
        assert sol.certificate_gap >= 0.0


def test_hinf_two_block_at_least_one_block():
    factors = factorize_agent(1.05, 1.05)
    sol1 = solve_hinf(agent_problem(factors, "hinf", "one", fir_order=24))
    sol2 = solve_hinf(agent_problem(factors, "hinf", "two", fir_order=24))
    assert sol2.cost >= sol1.cost - 1e-9


def test_hinf_doubling_fir_order_monotone():
    factors = factorize_agent(0.7, 1.15)
    c32 = solve_hinf(agent_problem(factors, "hinf", "two", fir_order=32)).cost
    c64 = solve_hinf(agent_problem(factors, "hinf", "two", fir_order=64)).cost
    assert c64 <= c32 * (1.0 + 2e-6)


def test_hinf_grid_doubling_within_tolerance():
    factors = factorize_agent(1.2, 1.0)
    sol = solve_hinf(agent_problem(factors, "hinf", "two", fir_order=32))
    assert sol.meta["doubling_rel_change"] <= 0.005


# -- enforce_bound -----------------------------------------------------------


def test_enforce_bound_noop_inside():
    z = FirMatrix(np.array([0.25, 0.25]))
    assert enforce_bound(z, 1.0) is z


def test_enforce_bound_scales_static():
    z = enforce_bound(FirMatrix(np.array([2.0])), 1.0)
    np.testing.assert_allclose(z.taps.ravel(), [1.0])


def test_enforce_bound_hits_gamma_exactly():
    rng = np.random.default_rng(3)
    z = FirMatrix(rng.standard_normal(12).reshape(-1, 1, 1))
    bounded = enforce_bound(z, 0.5)
    assert hinf_norm(bounded, check_doubling=False).value == pytest.approx(0.5, abs=1e-9)


# -- mu_sequence ---------------------------------------------------------------


def test_mu_sequence_identical_agents_constant():
    factors = factorize_agent(1.0, 1.0)
    mus, _ = mu_sequence([factors] * 4, "hinf", "two", fir_order=24)
    assert np.allclose(mus, mus[0])


def test_mu_sequence_max_composition():
    # two synthetic per-agent costs {1, 2} via static problems
    sols = [
        solve(static_problem("hinf", "one", h=1.0, fir_order=4, gamma=1e-9)),
        solve(static_problem("hinf", "one", h=2.0, fir_order=4, gamma=1e-9)),
    ]
    mus, _ = mu_sequence([], "hinf", "one", solutions=sols)
    assert mus[0] == pytest.approx(1.0, abs=1e-6)
    assert mus[1] == pytest.approx(2.0, abs=1e-6)


def test_mu_sequence_monotone_and_bounded(ensemble20):
    model, solutions = ensemble20
    mus, _ = mu_sequence([], "hinf", "two", solutions=solutions)
    assert np.all(np.diff(mus) >= -1e-12)
    assert mus[-1] <= model.gamma_h + 1e-9


@pytest.fixture(scope="module")
def ensemble20():
    from ensemblectl.ensemble import sample_population, solve_agent_problems

    model = sample_population(20, seed=99)
    solutions = solve_agent_problems(model, "hinf", "two", fir_order=24)
    return model, solutions

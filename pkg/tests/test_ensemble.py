import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ensemblectl.config import DominanceProfile
from ensemblectl.ensemble import (
    BlockQ,
    average_block_norm,
    average_term_h2_scaled,
    check_dominance,
    lemma_bound_h2,
    lemma_bound_h2_total,
    lemma_bound_hinf,
    load_snapshot,
    make_alpha_dominant,
    phi_at,
    psi_at,
    sample_parameters,
    sample_population,
    save_snapshot,
    selfish_Q,
)
from ensemblectl.lti import freq_response
from ensemblectl.norms import FrequencyGrid


@pytest.fixture(scope="module")
def model6():
    model = sample_population(6, seed=2024)
    q = selfish_Q(model, "hinf", "two", fir_order=16)
    return model, q


# -- sampling ------------------------------------------------------------------


def test_sampling_reproducible():
    a1, b1 = sample_parameters(5, seed=7)
    a2, b2 = sample_parameters(5, seed=7)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(b1, b2)


def test_sampling_nested_prefix():
    a_small, b_small = sample_parameters(4, seed=7)
    a_big, b_big = sample_parameters(64, seed=7)
    np.testing.assert_array_equal(a_small, a_big[:4])
    np.testing.assert_array_equal(b_small, b_big[:4])


def test_sampling_ranges():
    a, b = sample_parameters(500, seed=11)
    assert np.all((a >= 0.5) & (a <= 1.5))
    assert np.all((b >= 0.8) & (b <= 1.2))


def test_sampling_law_of_large_numbers():
    a, _ = sample_parameters(10_000, seed=13)
    assert abs(np.mean(a) - 1.0) < 0.02


def test_population_constants_and_determinism():
    m1 = sample_population(4, seed=5)
    m2 = sample_population(4, seed=5)
    assert m1.gamma_h == m2.gamma_h
    assert m1.gamma_u == m2.gamma_u
    assert m1.gamma_v == m2.gamma_v
    assert [ag.a for ag in m1.agents] == [ag.a for ag in m2.agents]
    assert m1.gamma_h == max(ag.norm_h for ag in m1.agents)


def test_truncate_prefix(model6):
    model, _ = model6
    small = model.truncate(3)
    assert small.n_agents == 3
    assert small.agents[0] is model.agents[0]
    assert small.gamma_h == max(ag.norm_h for ag in model.agents[:3])


# -- selfish_Q -------------------------------------------------------------------


def test_selfish_q_diagonal(model6):
    _, q = model6
    assert q.is_diagonal()
    assert q.alpha_actual == 0.0
    ok, _ = check_dominance(q, 0.0)
    assert ok


def test_selfish_q_costs_match_matching(model6):
    model, q = model6
    from ensemblectl.matching import agent_problem, solve

    sol0 = solve(agent_problem(model.agents[0].factors, "hinf", "two", 16))
    assert q.entry_costs[0] == pytest.approx(sol0.cost, rel=1e-12)


def test_selfish_q_homogeneous_identical_entries():
    from ensemblectl.config import SynthesisSettings
    from ensemblectl.ensemble import EnsembleModel, _record_for
    from ensemblectl.youla import factorize_agent

    record = _record_for(1.1, 1.0, factorize_agent(1.1, 1.0))
    model = EnsembleModel([record] * 3, seed=0, settings=SynthesisSettings())
    q = selfish_Q(model, "hinf", "two", fir_order=12)
    np.testing.assert_array_equal(q.diag_taps[0], q.diag_taps[1])
    np.testing.assert_array_equal(q.diag_taps[0], q.diag_taps[2])


# -- make_alpha_dominant ------------------------------------------------------------


def test_alpha_zero_returns_diagonal(model6):
    _, q = model6
    out = make_alpha_dominant(q, 0.0, seed=1)
    assert out.is_diagonal()
    np.testing.assert_array_equal(out.diag_taps, q.diag_taps)


def test_alpha_dominant_small_example():
    q = BlockQ(np.array([[1.0], [1.0], [1.0]]))
    out = make_alpha_dominant(q, 1.0, k=2, seed=3)
    assert not out.is_diagonal()
    for j in range(3):
        col = np.abs(out.off_coeffs[:, j])
        assert np.count_nonzero(col) == 2
        assert np.sum(col) == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_array_equal(out.diag_taps, q.diag_taps)


def test_alpha_dominant_exact_level(model6):
    _, q = model6
    profile = DominanceProfile(1.0, 0.25)
    out = make_alpha_dominant(q, profile, seed=5)
    target = profile.alpha(q.n_agents)
    assert out.alpha_actual == pytest.approx(target, rel=1e-9)


def test_alpha_dominant_tightness_probe(model6):
    _, q = model6
    out = make_alpha_dominant(q, 2.0, seed=7, weight_mode="signed")
    ok, margins = check_dominance(out, out.alpha_actual)
    assert ok and np.min(margins) >= -1e-12
    ok_tight, _ = check_dominance(out, out.alpha_actual * (1.0 - 1e-6))
    assert not ok_tight


def test_alpha_dominant_signed_mode(model6):
    _, q = model6
    out = make_alpha_dominant(q, 3.0, seed=11, weight_mode="signed")
    assert np.any(out.off_coeffs < 0.0)
    assert out.alpha_actual == pytest.approx(3.0, rel=1e-9)


def test_alpha_dominant_rejects_bad_inputs(model6):
    _, q = model6
    with pytest.raises(ValueError, match="nonnegative"):
        make_alpha_dominant(q, -1.0, seed=0)
    with pytest.raises(ValueError, match="fanout"):
        make_alpha_dominant(q, 1.0, k=q.n_agents, seed=0)


# -- check_dominance -------------------------------------------------------------


def test_dominance_diagonal_alpha_zero(model6):
    _, q = model6
    ok, margins = check_dominance(q, 0.0)
    assert ok and np.all(margins == 0.0)


def test_dominance_single_entry_cases():
    q = BlockQ(
        np.array([[1.0], [1.0]]),
        np.array([[0.0, 1.0], [0.0, 0.0]]),  # Q_12 = Q_22
    )
    ok, margins = check_dominance(q, 1.0)
    assert ok
    assert margins[1] == pytest.approx(0.0, abs=1e-12)
    ok_half, _ = check_dominance(q, 0.5)
    assert not ok_half


# -- phi_at / psi_at ---------------------------------------------------------------


def test_phi_q_zero_block_diagonal(model6):
    model, _ = model6
    q0 = BlockQ(np.zeros((model.n_agents, 1)))
    lam = np.exp(-1j * 0.9)
    mat = phi_at(model, q0, lam)
    pz, mw = model.pz, model.mw
    for j, ag in enumerate(model.agents):
        np.testing.assert_allclose(
            mat[j * pz : (j + 1) * pz, j * mw : (j + 1) * mw],
            freq_response(ag.factors.H, lam),
            atol=1e-12,
        )
    off = mat.copy()
    for j in range(model.n_agents):
        off[j * pz : (j + 1) * pz, j * mw : (j + 1) * mw] = 0.0
    assert np.max(np.abs(off)) == 0.0


def test_phi_single_agent_matches_parametrization(model6):
    model, q = model6
    lam = np.exp(-1j * 1.3)
    ag = model.agents[0]
    expected = (
        freq_response(ag.factors.H, lam)
        - freq_response(ag.factors.U, lam)
        @ q.entry(0, 0).response_grid(np.array([lam]))[0]
        @ freq_response(ag.factors.V, lam)
    )
    mat = phi_at(model, q, lam)
    np.testing.assert_allclose(mat[: model.pz, : model.mw], expected, atol=1e-12)


def test_phi_dense_vs_structured(model6):
    model, q = model6
    qc = make_alpha_dominant(q, 1.5, seed=13, weight_mode="signed")
    evaluator = model.hinf_evaluator(qc, channels=(0, 1), deviation=False)
    for theta in (0.2, 1.0, 2.9):
        dense = phi_at(model, qc, np.exp(-1j * theta))
        op = evaluator.operator(np.array([theta]))
        np.testing.assert_allclose(op.dense(0), dense, atol=1e-12)


def test_psi_projector_on_z_rows(model6):
    model, q = model6
    lam = np.exp(-1j * 0.5)
    phi = phi_at(model, q, lam)
    psi = psi_at(model, q, lam)
    n, pz = model.n_agents, model.pz
    z_rows = np.arange(n) * pz
    # z rows have zero column mean, xi rows are untouched
    assert np.max(np.abs(psi[z_rows, :].mean(axis=0))) < 1e-14
    xi_rows = z_rows + 1
    np.testing.assert_array_equal(psi[xi_rows, :], phi[xi_rows, :])


def test_psi_norm_never_exceeds_phi(model6):
    model, q = model6
    rng = np.random.default_rng(15)
    for theta in rng.uniform(0, np.pi, 16):
        lam = np.exp(-1j * theta)
        s_phi = np.linalg.svd(phi_at(model, q, lam), compute_uv=False)[0]
        s_psi = np.linalg.svd(psi_at(model, q, lam), compute_uv=False)[0]
        assert s_psi <= s_phi + 1e-12


def test_projector_suite():
    for n in (2, 5, 60):
        t_mat = np.eye(n) - np.ones((n, n)) / n
        np.testing.assert_allclose(t_mat @ t_mat, t_mat, atol=1e-12)
        np.testing.assert_allclose(t_mat, t_mat.T, atol=1e-12)
        np.testing.assert_allclose(t_mat @ np.ones(n), 0.0, atol=1e-12)
        assert np.linalg.norm(t_mat, 2) == pytest.approx(1.0, abs=1e-10)


def test_psi_n2_explicit_projector():
    t_mat = np.eye(2) - np.ones((2, 2)) / 2
    np.testing.assert_allclose(t_mat, [[0.5, -0.5], [-0.5, 0.5]])


# -- average term and bounds --------------------------------------------------------


def test_average_norm_below_gamma_h_q_zero(model6):
    model, _ = model6
    q0 = BlockQ(np.zeros((model.n_agents, 1)))
    value = average_block_norm(model, q0, model.n_agents)
    assert value <= model.gamma_h + 1e-9


def test_average_norm_decreases_with_n():
    big = sample_population(24, seed=77)
    q_big = selfish_Q(big, "hinf", "two", fir_order=12)
    small = big.truncate(12)
    q_small = BlockQ(q_big.diag_taps[:12], None)
    v_small = average_block_norm(small, q_small, 4)
    v_big = average_block_norm(big, q_big, 4)
    assert v_big < v_small


def test_average_norm_against_bound(model6):
    model, q = model6
    for profile in (DominanceProfile(1.0, 0.0), DominanceProfile(1.0, 0.25)):
        qd = make_alpha_dominant(q, profile, k=3, seed=21)
        alpha = profile.alpha(model.n_agents)
        for m in (1, 3, 6):
            measured = average_block_norm(model, qd, m)
            bound = lemma_bound_hinf(
                m, model.n_agents, model.gamma_h, qd.gamma_q, model.gamma_u, model.gamma_v, alpha
            )
            assert measured <= bound


def test_average_h2_against_bound(model6):
    model, q = model6
    qd = make_alpha_dominant(q, DominanceProfile(1.0, 0.25), k=3, seed=23)
    measured = average_term_h2_scaled(model, qd)
    bound = lemma_bound_h2_total(
        model.n_agents, model.gamma_h, model.gamma_u, qd.gamma_q, model.gamma_v,
        DominanceProfile(1.0, 0.25).alpha(model.n_agents),
    )
    assert measured <= bound


def test_lemma_bound_arithmetic():
    assert lemma_bound_hinf(4, 100, 1.0, 1.0, 1.0, 1.0, 0.0) == pytest.approx(0.4)
    assert lemma_bound_hinf(1, 4, 1.0, 1.0, 1.0, 1.0, 0.0) == pytest.approx(
        2.0 * lemma_bound_hinf(1, 16, 1.0, 1.0, 1.0, 1.0, 0.0)
    )
    assert lemma_bound_h2(100, 1.0, 1.0, 3.0) == pytest.approx(0.4)
    assert lemma_bound_h2_total(100, 1.0, 1.0, 1.0, 1.0, 3.0) == pytest.approx(0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 30), st.floats(0.0, 5.0))
def test_dominance_of_constructed_q_property(n, alpha):
    taps = np.linspace(0.5, 1.5, n).reshape(-1, 1)
    q = BlockQ(taps)
    out = make_alpha_dominant(q, float(alpha), seed=1)
    ok, _ = check_dominance(out, alpha + 1e-9)
    assert ok
    if alpha > 1e-6:
        ok_tight, _ = check_dominance(out, alpha * (1.0 - 1e-6))
        assert not ok_tight


# -- snapshots -----------------------------------------------------------------------


@pytest.mark.parametrize("fmt,suffix", [("json", ".json"), ("npz", ".npz")])
def test_snapshot_round_trip(tmp_path, model6, fmt, suffix):
    model, q = model6
    qc = make_alpha_dominant(q, 1.25, seed=31, weight_mode="signed")
    path = str(tmp_path / f"snap{suffix}")
    save_snapshot(path, model, qc, fmt=fmt)
    loaded_model, loaded_q = load_snapshot(path, fmt=fmt)
    assert loaded_model.n_agents == model.n_agents
    for ag1, ag2 in zip(loaded_model.agents, model.agents):
        assert ag1.a == ag2.a and ag1.b == ag2.b
        np.testing.assert_array_equal(ag1.factors.H.A, ag2.factors.H.A)
    np.testing.assert_array_equal(loaded_q.diag_taps, qc.diag_taps)
    np.testing.assert_array_equal(loaded_q.off_coeffs, qc.off_coeffs)
    assert loaded_model.gamma_h == model.gamma_h

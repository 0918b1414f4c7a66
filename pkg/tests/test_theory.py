import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igm.errors import ConfigError, ConvergenceError
from igm.theory import (
    AffinityGraph,
    bound_diagnostic,
    clustered_joint,
    coding_length_exact,
    coding_length_taylor,
    equivalence_check,
    label_disagreement,
    optimal_factor,
    pairwise_similarity_energy,
    random_unit_columns,
    residual_eigenvalue_mass,
    run_bound_suite,
    run_coding_suite,
    run_equivalence_suite,
    spectral_objective,
    taylor_tail_bound,
)


# --- coding length ----------------------------------------------------------

def test_orthonormal_two_by_two_closed_form():
    value = coding_length_exact(np.eye(2), eps=1.0)
    assert abs(value - 4.0 * np.log(2.0)) < 1e-10


def test_zero_matrix_degenerate():
    assert coding_length_exact(np.zeros((3, 5)), eps=0.7, check_norm=False) == 0.0


def test_non_unit_columns_rejected():
    with pytest.raises(ConfigError, match="unit norm"):
        coding_length_exact(2.0 * np.eye(2), eps=1.0)


def test_duplicated_column_eigenvalue_route_matches_determinant():
    z = np.array([[1.0, 1.0], [0.0, 0.0]])
    eps = 0.5
    d, m = z.shape
    lam = d / (m * eps**2)
    mu = (m + d) / 2
    det_route = mu * np.log(np.linalg.det(np.eye(m) + lam * z.T @ z))
    assert abs(coding_length_exact(z, eps) - det_route) < 1e-12
    # eigenvalues of lam Z^T Z are {2 lam, 0}
    assert abs(det_route - mu * np.log1p(2 * lam)) < 1e-12


def _safe_eps(z: np.ndarray, target_radius: float = 0.5) -> float:
    d, m = z.shape
    rho = float(np.max(np.linalg.eigvalsh(z.T @ z)))
    return float(np.sqrt(d * rho / (m * target_radius)))


def test_taylor_converges_to_exact():
    rng = np.random.default_rng(3)
    z = random_unit_columns(4, 6, rng)
    eps = _safe_eps(z)
    exact = coding_length_exact(z, eps)
    errors = [abs(coding_length_taylor(z, eps, order)[0] - exact) for order in (2, 4, 8, 32)]
    assert all(a > b for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-8


def test_taylor_first_term_is_data_independent():
    rng = np.random.default_rng(4)
    z = random_unit_columns(3, 5, rng)
    eps = _safe_eps(z)
    d, m = z.shape
    mu, lam = (m + d) / 2, d / (m * eps**2)
    partial, _ = coding_length_taylor(z, eps, order=1)
    assert abs(partial - m * mu * lam) < 1e-10


def test_taylor_tail_below_geometric_bound():
    rng = np.random.default_rng(5)
    z = random_unit_columns(4, 6, rng)
    eps = _safe_eps(z)
    for order in (2, 4, 6):
        _, tail = coding_length_taylor(z, eps, order)
        assert abs(tail) <= taylor_tail_bound(z, eps, order)


def test_taylor_partial_sums_alternate():
    rng = np.random.default_rng(6)
    z = random_unit_columns(3, 4, rng)
    eps = _safe_eps(z)
    exact = coding_length_exact(z, eps)
    signs = [np.sign(coding_length_taylor(z, eps, n)[0] - exact) for n in range(1, 9)]
    assert all(signs[i] == -signs[i + 1] for i in range(len(signs) - 1))


def test_taylor_divergence_names_radius():
    z = np.eye(2)
    with pytest.raises(ConvergenceError, match="radius"):
        coding_length_taylor(z, eps=0.1, order=4)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_coding_length_invariances(seed):
    rng = np.random.default_rng(seed)
    z = random_unit_columns(3, 5, rng)
    base = coding_length_exact(z, eps=1.0)
    perm = rng.permutation(5)
    assert abs(coding_length_exact(z[:, perm], eps=1.0) - base) < 1e-10
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    assert abs(coding_length_exact(q @ z, eps=1.0) - base) < 1e-10


# --- similarity energy and spectral objective --------------------------------

def test_similarity_energy_orthonormal():
    assert abs(pairwise_similarity_energy(np.eye(3)) - 3.0) < 1e-12


def test_similarity_energy_identical_columns():
    z = np.tile(np.array([[1.0], [0.0]]), (1, 4))
    assert abs(pairwise_similarity_energy(z) - 16.0) < 1e-12


def test_similarity_energy_matches_double_loop():
    rng = np.random.default_rng(8)
    z = random_unit_columns(3, 6, rng)
    direct = sum(
        float(z[:, i] @ z[:, j]) ** 2 for i in range(6) for j in range(6)
    )
    assert abs(pairwise_similarity_energy(z) - direct) < 1e-12


def test_spectral_objective_cases():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((4, 4))
    a = (a + a.T) / 2
    f = optimal_factor(a, 4)
    # full-rank factor of the PSD part reproduces it only if a is PSD; use PSD
    a_psd = a @ a.T / 10 + np.eye(4)
    f = optimal_factor(a_psd, 4)
    assert spectral_objective(f, a_psd) < 1e-18
    assert abs(spectral_objective(np.zeros((2, 4)), a) - np.sum(a * a)) < 1e-12
    # elementwise oracle
    f = rng.standard_normal((2, 4))
    diff = a - f.T @ f
    manual = sum(diff[i, j] ** 2 for i in range(4) for j in range(4))
    assert abs(spectral_objective(f, a) - manual) < 1e-12


# --- affinity graphs and the equivalence check -------------------------------

def test_affinity_graph_validation():
    with pytest.raises(ConfigError, match="sums to"):
        AffinityGraph.from_joint(np.eye(3))
    with pytest.raises(ConfigError, match="nonnegative"):
        AffinityGraph.from_joint(np.array([[1.5, -0.5], [0.0, 0.0]]))


def test_identity_joint_gives_identity_adjacency():
    graph = AffinityGraph.from_joint(np.eye(4) / 4)
    assert np.allclose(graph.adjacency, np.eye(4))
    assert np.allclose(graph.laplacian, 0.0)


def test_equivalence_pairing_term_matches_enumeration():
    # -2 Tr(F A F^T) must equal the explicit expectation over the joint.
    rng = np.random.default_rng(10)
    joint, _ = clustered_joint(2, 3, within=0.7)
    graph = AffinityGraph.from_joint(joint)
    z = random_unit_columns(3, graph.size, rng)
    f = z * np.sqrt(graph.marginal_x)[None, :]
    matrix_route = -2.0 * np.trace(f @ graph.adjacency @ f.T)
    loop_route = -2.0 * sum(
        joint[x, y] * float(z[:, y] @ z[:, x])
        for x in range(graph.size)
        for y in range(graph.size)
    )
    assert abs(matrix_route - loop_route) < 1e-12


def test_equivalence_difference_constant_identity_instance():
    report = equivalence_check(np.eye(4) / 4, dim=2, trials=25)
    assert report["difference_variance"] < 1e-8
    assert report["max_deviation_from_constant"] < 1e-8
    assert abs(report["expected_constant"] + 4.0) < 1e-12  # -|I_4|_F^2


def test_equivalence_quadratic_route_agreement():
    report = equivalence_check(np.eye(8) / 8, dim=4, trials=20)
    assert report["quad_route_max_error"] < 1e-10


def test_equivalence_single_point_space():
    report = equivalence_check(np.ones((1, 1)), dim=1, trials=5)
    assert report["difference_variance"] < 1e-16


def test_block_recovery():
    joint, labels = clustered_joint(2, 3, within=1.0)
    graph = AffinityGraph.from_joint(joint)
    factor = optimal_factor(graph.adjacency, 2)
    gram = factor.T @ factor
    off_block = gram[labels[:, None] != labels[None, :]]
    assert np.abs(off_block).max() < 1e-6


def test_top_eigenvalue_at_most_one():
    for joint in (np.eye(5) / 5, clustered_joint(3, 4, 0.5)[0]):
        graph = AffinityGraph.from_joint(joint)
        assert np.linalg.eigvalsh(graph.adjacency).max() <= 1.0 + 1e-12


# --- bound diagnostic ---------------------------------------------------------

def test_clustered_joint_is_valid_and_pure():
    joint, labels = clustered_joint(3, 5, within=0.4)
    graph = AffinityGraph.from_joint(joint)
    assert label_disagreement(joint, labels) == 0.0
    assert graph.size == 15


def test_residual_mass_cases():
    eigs = np.array([1.0, 1.0, 0.5, 0.25])
    assert residual_eigenvalue_mass(eigs, 2) == pytest.approx(0.3125)
    assert residual_eigenvalue_mass(eigs, 4) == 0.0


def test_perfectly_clustered_graph():
    joint, _ = clustered_joint(3, 6, within=1.0)
    graph = AffinityGraph.from_joint(joint)
    eigs = np.linalg.eigvalsh(graph.adjacency)
    assert residual_eigenvalue_mass(eigs, 3) < 1e-12


def test_bound_diagnostic_monotone_direction():
    report = bound_diagnostic()
    assert report["monotone"]
    masses = report["residual_masses"]
    assert all(a < b for a, b in zip(masses, masses[1:]))
    ideal = report["members"][0]
    assert ideal["mean_error"] < 0.05
    assert all(m["alpha"] == 0.0 for m in report["members"])


# --- packaged suites ----------------------------------------------------------

@pytest.mark.parametrize("runner", [run_coding_suite, run_equivalence_suite, run_bound_suite])
def test_suites_pass(runner):
    report = runner()
    failing = [c["name"] for c in report["checks"] if not c["pass"]]
    assert report["pass"], f"failing checks: {failing}"

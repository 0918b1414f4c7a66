"""Numerical oracles for the coding-length and spectral-equivalence theory.

Everything here runs on small, fully enumerable instances in double
precision: the log-det coding length of a unit-column feature matrix,
its Taylor expansion with an explicit tail, the identity tying the
idempotent-generative objective to a spectral factorization loss up to
an F-independent constant, and a residual-eigenvalue diagnostic for the
downstream-error bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError

DEFAULT_EPS = 0.5


def _as_feature_matrix(z: np.ndarray, check_norm: bool) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ConfigError(f"feature matrix must be d x m, got shape {z.shape}")
    if check_norm:
        norms = np.linalg.norm(z, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-8):
            raise ConfigError("feature matrix columns must be unit norm")
    return z


def _coding_constants(z: np.ndarray, eps: float) -> tuple[float, float]:
    if eps <= 0:
        raise ConfigError(f"distortion bound must be > 0, got {eps}")
    d, m = z.shape
    mu = (m + d) / 2.0
    lam = d / (m * eps * eps)
    return mu, lam


def _gram_eigenvalues(z: np.ndarray) -> np.ndarray:
    eigs = np.linalg.eigvalsh(z.T @ z)
    return np.clip(eigs, 0.0, None)


def coding_length_exact(z: np.ndarray, eps: float, *, check_norm: bool = True) -> float:
    """Lossy-coding length: ((m+d)/2) log det(I + d/(m eps^2) Z^T Z).

    Natural logarithm, evaluated through the eigenvalues of the Gram
    matrix.
    """
    z = _as_feature_matrix(z, check_norm)
    mu, lam = _coding_constants(z, eps)
    return float(mu * np.sum(np.log1p(lam * _gram_eigenvalues(z))))


def coding_length_taylor(
    z: np.ndarray, eps: float, order: int, *, check_norm: bool = True
) -> tuple[float, float]:
    """Partial Taylor sum of the coding length and its exact tail.

    Returns (partial sum through the given order, exact - partial).
    Requires the spectral radius of lam * Z^T Z to be below 1.
    """
    if order < 1:
        raise ConfigError(f"order must be >= 1, got {order}")
    z = _as_feature_matrix(z, check_norm)
    mu, lam = _coding_constants(z, eps)
    eigs = _gram_eigenvalues(z)
    radius = lam * eigs.max(initial=0.0)
    if radius >= 1.0:
        raise ConvergenceError(
            f"Taylor expansion diverges: spectral radius {radius:.6f} >= 1"
        )
    powers = lam * eigs
    partial = 0.0
    for n in range(1, order + 1):
        partial += (-1.0) ** (n - 1) / n * np.sum(powers**n)
    partial *= mu
    exact = float(mu * np.sum(np.log1p(lam * eigs)))
    return float(partial), float(exact - partial)


def taylor_tail_bound(
    z: np.ndarray, eps: float, order: int, *, check_norm: bool = True
) -> float:
    """Per-eigenvalue geometric bound on the tail beyond the given order."""
    z = _as_feature_matrix(z, check_norm)
    mu, lam = _coding_constants(z, eps)
    powers = lam * _gram_eigenvalues(z)
    if powers.max(initial=0.0) >= 1.0:
        raise ConvergenceError("geometric tail bound needs spectral radius < 1")
    return float(mu * np.sum(powers ** (order + 1) / ((order + 1) * (1.0 - powers))))


def pairwise_similarity_energy(z: np.ndarray, *, check_norm: bool = True) -> float:
    """Sum of squared pairwise inner products: Tr((Z^T Z)^2)."""
    z = _as_feature_matrix(z, check_norm)
    gram = z.T @ z
    return float(np.sum(gram * gram))


def spectral_objective(f: np.ndarray, adjacency: np.ndarray) -> float:
    """Squared Frobenius distance between the adjacency and the factor Gram."""
    f = np.asarray(f, dtype=np.float64)
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.shape != (f.shape[1], f.shape[1]):
        raise ConfigError(
            f"adjacency shape {adjacency.shape} incompatible with factor {f.shape}"
        )
    diff = adjacency - f.T @ f
    return float(np.sum(diff * diff))


@dataclass(frozen=True)
class AffinityGraph:
    """Finite joint distribution with its normalized adjacency."""

    joint: np.ndarray
    marginal_x: np.ndarray
    marginal_y: np.ndarray
    adjacency: np.ndarray

    @classmethod
    def from_joint(cls, joint: np.ndarray) -> "AffinityGraph":
        joint = np.asarray(joint, dtype=np.float64)
        if joint.ndim != 2 or joint.shape[0] != joint.shape[1]:
            raise ConfigError(f"joint must be square, got shape {joint.shape}")
        if np.any(joint < 0):
            raise ConfigError("joint probabilities must be nonnegative")
        if not np.isclose(joint.sum(), 1.0, atol=1e-10):
            raise ConfigError(f"joint distribution sums to {joint.sum():.6g}, not 1")
        px = joint.sum(axis=1)
        py = joint.sum(axis=0)
        if np.any(px <= 0) or np.any(py <= 0):
            raise ConfigError("every point needs positive marginal probability")
        adjacency = joint / np.sqrt(np.outer(px, py))
        return cls(joint=joint, marginal_x=px, marginal_y=py, adjacency=adjacency)

    @property
    def size(self) -> int:
        return self.joint.shape[0]

    @property
    def laplacian(self) -> np.ndarray:
        return np.eye(self.size) - self.adjacency


def random_unit_columns(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((dim, count))
    return z / np.linalg.norm(z, axis=0, keepdims=True)


def equivalence_check(
    joint: np.ndarray,
    dim: int,
    trials: int = 20,
    rng: np.random.Generator | None = None,
    lam: float = 0.5,
) -> dict:
    """Verify the objective identity on one enumerable instance.

    For random feature assignments F = Z diag(sqrt(p)), evaluates the
    pairing term E[-2 f(x_hat).f(x)], recovers the quadratic repulsion
    term Tr((F^T F)^2) from the exact log-det coding length by removing
    the linear head and the explicitly summed order>=3 tail, and
    subtracts the factorization loss |A - F^T F|_F^2. The result must be
    the F-independent constant -|A|_F^2.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    graph = AffinityGraph.from_joint(joint)
    m = graph.size
    if not 0 < dim:
        raise ConfigError(f"dim must be positive, got {dim}")
    if not 0 < lam < 1:
        raise ConfigError(f"lam must be in (0, 1) for series convergence, got {lam}")

    adjacency = graph.adjacency
    adjacency_energy = float(np.sum(adjacency * adjacency))
    sqrt_p = np.sqrt(graph.marginal_x)

    rows = []
    for _ in range(trials):
        z = random_unit_columns(dim, m, rng)
        f = z * sqrt_p[None, :]
        pairing = float(-2.0 * np.trace(f @ adjacency @ f.T))
        quad_direct = float(np.sum((f.T @ f) ** 2))

        phis = np.clip(np.linalg.eigvalsh(f.T @ f), 0.0, None)
        radius = lam * phis.max(initial=0.0)
        if radius >= 1.0:
            raise ConvergenceError(f"series radius {radius:.6f} >= 1")
        logdet = float(np.sum(np.log1p(lam * phis)))
        linear = float(lam * phis.sum())
        tail = 0.0
        n = 3
        while n <= 400:
            term = (-1.0) ** (n - 1) / n * float(np.sum((lam * phis) ** n))
            tail += term
            if abs(term) < 1e-18:
                break
            n += 1
        quad_from_exact = (2.0 / lam**2) * (linear + tail - logdet)

        factorization = spectral_objective(f, adjacency)
        rows.append({
            "pairing": pairing,
            "quad_direct": quad_direct,
            "quad_from_exact": quad_from_exact,
            "factorization": factorization,
            "difference": pairing + quad_from_exact - factorization,
            "tail": tail,
        })

    diffs = np.array([r["difference"] for r in rows])
    quad_route_err = max(abs(r["quad_direct"] - r["quad_from_exact"]) for r in rows)
    return {
        "size": m,
        "dim": dim,
        "lam": lam,
        "implied_eps": float(np.sqrt(dim / (m * lam))),
        "trials": trials,
        "expected_constant": -adjacency_energy,
        "difference_mean": float(diffs.mean()),
        "difference_variance": float(diffs.var()),
        "max_deviation_from_constant": float(np.abs(diffs + adjacency_energy).max()),
        "quad_route_max_error": float(quad_route_err),
        "top_eigenvalue": float(np.linalg.eigvalsh(adjacency).max()),
        "rows": rows,
    }


def optimal_factor(adjacency: np.ndarray, dim: int) -> np.ndarray:
    """Best rank-dim factor of a symmetric adjacency in Frobenius norm."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    eigvals, eigvecs = np.linalg.eigh(adjacency)
    order = np.argsort(eigvals)[::-1][:dim]
    kept = np.clip(eigvals[order], 0.0, None)
    return (np.sqrt(kept)[:, None]) * eigvecs[:, order].T


def clustered_joint(
    classes: int, per_class: int, within: float
) -> tuple[np.ndarray, np.ndarray]:
    """Joint p(x, x_hat) that regenerates within the class of x.

    With probability ``within`` the partner is uniform over the class,
    otherwise it is x itself; classes are never crossed, so the label
    disagreement alpha is exactly 0.
    """
    if not 0.0 <= within <= 1.0:
        raise ConfigError(f"within must be in [0, 1], got {within}")
    m = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    joint = np.zeros((m, m))
    for x in range(m):
        members = np.flatnonzero(labels == labels[x])
        joint[x, members] += within / (m * per_class)
        joint[x, x] += (1.0 - within) / m
    return joint, labels


def residual_eigenvalue_mass(eigenvalues: np.ndarray, dim: int) -> float:
    """Sum of squared eigenvalues beyond the top dim."""
    ordered = np.sort(np.asarray(eigenvalues, dtype=np.float64))[::-1]
    return float(np.sum(ordered[dim:] ** 2))


def label_disagreement(joint: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a joint draw pairs points of different labels."""
    labels = np.asarray(labels)
    differ = labels[:, None] != labels[None, :]
    return float(np.sum(np.asarray(joint)[differ]))


def _nearest_centroid_error(embedding: np.ndarray, labels: np.ndarray) -> float:
    """Leave-one-out nearest-centroid error rate."""
    classes = np.unique(labels)
    sums = {c: embedding[labels == c].sum(axis=0) for c in classes}
    counts = {c: int((labels == c).sum()) for c in classes}
    wrong = 0
    for i, point in enumerate(embedding):
        best, best_dist = None, np.inf
        for c in classes:
            n = counts[c] - (1 if labels[i] == c else 0)
            if n == 0:
                continue
            centroid = (sums[c] - (point if labels[i] == c else 0)) / n
            dist = float(np.sum((point - centroid) ** 2))
            if dist < best_dist:
                best, best_dist = c, dist
        wrong += int(best != labels[i])
    return wrong / len(labels)


def bound_diagnostic(
    within_family: tuple[float, ...] = (1.0, 0.5, 0.15),
    classes: int = 3,
    per_class: int = 20,
    dim: int | None = None,
    estimation_noise: float = 0.05,
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
) -> dict:
    """Residual-mass vs downstream-error trend on a toy graph family.

    Each family member shares the class structure and alpha = 0 but
    varies regeneration diversity. The empirical error comes from a
    nearest-centroid read-out on the rank-dim spectral embedding of a
    noise-perturbed adjacency (the perturbation stands in for
    finite-sample estimation of the graph).
    """
    if dim is None:
        dim = classes
    members = []
    for within in within_family:
        joint, labels = clustered_joint(classes, per_class, within)
        graph = AffinityGraph.from_joint(joint)
        eigvals = np.linalg.eigvalsh(graph.adjacency)
        errors = []
        for seed in seeds:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(within * 1000),)))
            noise = rng.standard_normal(graph.adjacency.shape) * estimation_noise
            noisy = graph.adjacency + (noise + noise.T) / 2.0
            factor = optimal_factor(noisy, dim)
            errors.append(_nearest_centroid_error(factor.T, labels))
        members.append({
            "within": within,
            "alpha": label_disagreement(joint, labels),
            "residual_mass": residual_eigenvalue_mass(eigvals, dim),
            "top_eigenvalue": float(eigvals.max()),
            "errors": errors,
            "mean_error": float(np.mean(errors)),
        })

    members.sort(key=lambda row: row["residual_mass"])
    masses = [row["residual_mass"] for row in members]
    mean_errors = [row["mean_error"] for row in members]
    monotone = all(a <= b + 1e-12 for a, b in zip(mean_errors, mean_errors[1:]))
    return {
        "classes": classes,
        "per_class": per_class,
        "dim": dim,
        "estimation_noise": estimation_noise,
        "members": members,
        "residual_masses": masses,
        "mean_errors": mean_errors,
        "monotone": monotone,
    }


# --- Machine-checkable suites used by the CLI and the tests -----------------

def run_coding_suite() -> dict:
    checks = []

    z = np.eye(2)
    value = coding_length_exact(z, eps=1.0)
    checks.append({
        "name": "orthonormal_closed_form",
        "value": value,
        "expected": 4.0 * np.log(2.0),
        "pass": bool(abs(value - 4.0 * np.log(2.0)) < 1e-10),
    })

    zero = np.zeros((3, 4))
    value = coding_length_exact(zero, eps=1.0, check_norm=False)
    checks.append({"name": "zero_matrix", "value": value, "expected": 0.0,
                   "pass": bool(value == 0.0)})

    dup = np.array([[1.0, 1.0], [0.0, 0.0]])
    mu, lam = _coding_constants(dup, DEFAULT_EPS)
    det_route = mu * np.log(np.linalg.det(np.eye(2) + lam * dup.T @ dup))
    eig_route = coding_length_exact(dup, DEFAULT_EPS)
    checks.append({
        "name": "duplicate_column_two_routes",
        "value": eig_route, "expected": float(det_route),
        "pass": bool(abs(eig_route - det_route) < 1e-12),
    })

    rng = np.random.default_rng(7)
    z = random_unit_columns(3, 5, rng)
    gram_radius = float(np.max(np.linalg.eigvalsh(z.T @ z)))
    eps_safe = float(np.sqrt(3 * gram_radius / (5 * 0.5)))  # makes lam * rho = 0.5
    _, tail = coding_length_taylor(z, eps_safe, order=6)
    bound = taylor_tail_bound(z, eps_safe, order=6)
    checks.append({
        "name": "taylor_tail_below_geometric_bound",
        "value": abs(tail), "expected": bound,
        "pass": bool(abs(tail) <= bound),
    })

    mu, lam = _coding_constants(z, eps_safe)
    first_term, _ = coding_length_taylor(z, eps_safe, order=1)
    checks.append({
        "name": "first_term_is_data_independent",
        "value": first_term, "expected": 5 * mu * lam,
        "pass": bool(abs(first_term - 5 * mu * lam) < 1e-10),
    })

    exact = coding_length_exact(z, eps_safe)
    signs = []
    for order in range(1, 8):
        partial, _ = coding_length_taylor(z, eps_safe, order=order)
        signs.append(np.sign(partial - exact))
    alternating = all(signs[i] == -signs[i + 1] for i in range(len(signs) - 1))
    checks.append({
        "name": "partial_sums_alternate_around_exact",
        "value": [float(s) for s in signs], "expected": "alternating signs",
        "pass": bool(alternating),
    })

    return {"suite": "coding", "checks": checks,
            "pass": all(c["pass"] for c in checks)}


def _equivalence_instances() -> list[tuple[str, np.ndarray, int]]:
    instances = []
    instances.append(("identity_m4", np.eye(4) / 4.0, 2))
    instances.append(("identity_m8", np.eye(8) / 8.0, 4))
    two_block, _ = clustered_joint(2, 3, within=1.0)
    instances.append(("two_block", two_block, 2))
    rng = np.random.default_rng(11)
    raw = rng.uniform(0.05, 1.0, size=(6, 6))
    sym = (raw + raw.T) / 2.0
    instances.append(("random_symmetric", sym / sym.sum(), 3))
    mixed, _ = clustered_joint(2, 4, within=0.6)
    instances.append(("two_block_partial", mixed, 3))
    return instances


def run_equivalence_suite(trials: int = 20) -> dict:
    checks = []
    rng = np.random.default_rng(23)
    for name, joint, dim in _equivalence_instances():
        report = equivalence_check(joint, dim, trials=trials, rng=rng)
        checks.append({
            "name": f"constant_difference_{name}",
            "variance": report["difference_variance"],
            "max_deviation_from_constant": report["max_deviation_from_constant"],
            "quad_route_max_error": report["quad_route_max_error"],
            "expected_constant": report["expected_constant"],
            "top_eigenvalue": report["top_eigenvalue"],
            "pass": bool(
                report["difference_variance"] < 1e-8
                and report["max_deviation_from_constant"] < 1e-8
                and report["top_eigenvalue"] <= 1.0 + 1e-12
            ),
        })

    two_block, labels = clustered_joint(2, 3, within=1.0)
    graph = AffinityGraph.from_joint(two_block)
    factor = optimal_factor(graph.adjacency, 2)
    gram = factor.T @ factor
    off_block = gram[labels[:, None] != labels[None, :]]
    checks.append({
        "name": "block_recovery_rank2",
        "max_off_block_similarity": float(np.abs(off_block).max()),
        "pass": bool(np.abs(off_block).max() < 1e-6),
    })

    single = equivalence_check(np.ones((1, 1)), 1, trials=5)
    checks.append({
        "name": "single_point_space",
        "variance": single["difference_variance"],
        "pass": bool(single["difference_variance"] < 1e-16),
    })

    return {"suite": "equivalence", "checks": checks,
            "pass": all(c["pass"] for c in checks)}


def run_bound_suite() -> dict:
    report = bound_diagnostic()
    checks = [{
        "name": "monotone_error_vs_residual_mass",
        "residual_masses": report["residual_masses"],
        "mean_errors": report["mean_errors"],
        "pass": bool(report["monotone"]),
    }]

    ideal = report["members"][0]
    checks.append({
        "name": "perfectly_clustered_graph",
        "residual_mass": ideal["residual_mass"],
        "mean_error": ideal["mean_error"],
        "alpha": ideal["alpha"],
        "pass": bool(ideal["residual_mass"] < 1e-12 and ideal["mean_error"] < 0.05
                     and ideal["alpha"] == 0.0),
    })

    joint, _ = clustered_joint(3, 4, within=0.5)
    graph = AffinityGraph.from_joint(joint)
    eigvals = np.linalg.eigvalsh(graph.adjacency)
    checks.append({
        "name": "full_rank_embedding_degenerate",
        "residual_mass": residual_eigenvalue_mass(eigvals, graph.size),
        "pass": bool(residual_eigenvalue_mass(eigvals, graph.size) == 0.0),
    })

    return {"suite": "bound", "checks": checks,
            "pass": all(c["pass"] for c in checks),
            "detail": report}


SUITES = {
    "coding": run_coding_suite,
    "equivalence": run_equivalence_suite,
    "bound": run_bound_suite,
}

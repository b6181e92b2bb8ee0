"""Calderon-Zygmund decomposition on dyadic grid cubes, weak-L^1 quasi-norms,
operator norm estimates and the weak-(1,1) bound arithmetic.

Weak-(1,1) lower bounds use delta inputs only: for a kernel operator on a
finite grid every L^1 input is a convex combination of normalized deltas,
so no other input can give a larger ratio of |Tf| level sets.
"""

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from app.core.logging import logger
from app.models.exceptions import DecompositionError
from app.models.media import Region
from app.models.operators import DiscreteOperator
from app.models.space import GridSpace, distance_matrix, dyadic_cubes
from app.services.assemble import compose
from app.services.verify.kernels import KernelMatrix


@dataclass
class BadPart:
    cube: np.ndarray
    values: np.ndarray
    center: int
    radius: float
    level: int


@dataclass
class CZDecomposition:
    """f = g + sum b_i at level alpha.

    ``c_good`` and ``c_bad`` are the constructive constants 2^d and 2^(d+1);
    ``c_mass`` is the largest ball to cube volume ratio and ``overlap`` the
    measured maximal number of balls through one node.
    """

    space: GridSpace
    alpha: float
    good: np.ndarray
    bad: list[BadPart]
    c_good: float
    c_bad: float
    c_mass: float
    overlap: int

    @property
    def overlap_bound(self) -> int:
        """Crude geometric bound 2^d (ceil(sqrt d) + 1)^d."""
        d = self.space.dim
        return 2**d * (math.ceil(math.sqrt(d)) + 1) ** d

    def bad_total(self) -> np.ndarray:
        total = np.zeros(self.space.n_nodes)
        for part in self.bad:
            total[part.cube] += part.values
        return total

    def ball_indices(self, part: BadPart) -> np.ndarray:
        return np.flatnonzero(distance_matrix(self.space)[part.center] < part.radius)

    def check_invariants(self, f: np.ndarray) -> dict[str, bool]:
        """Reconstruction, good bound, bad support/size, mass, overlap, mean zero."""
        mu = self.space.node_measure
        f_norm = float(np.sum(np.abs(f) * mu))
        covered = np.zeros(self.space.n_nodes, dtype=int)
        bad_ok, mean_ok, ball_mass = True, True, 0.0
        for part in self.bad:
            ball = self.ball_indices(part)
            inside = np.isin(part.cube, ball)
            volume = float(np.sum(mu[ball]))
            size = float(np.sum(np.abs(part.values) * mu[part.cube]))
            bad_ok &= bool(inside.all()) and size / volume <= self.c_bad * self.alpha * (1 + 1e-12)
            mean_ok &= abs(np.sum(part.values * mu[part.cube])) <= 1e-12 * max(size, 1.0)
            ball_mass += volume
            covered[ball] += 1
        scale = max(float(np.max(np.abs(f))), 1.0)
        return {
            "reconstruction": bool(np.max(np.abs(f - self.good - self.bad_total())) <= 1e-12 * scale),
            "good_bound": bool(np.max(np.abs(self.good)) <= self.c_good * self.alpha * (1 + 1e-12)),
            "bad_support_and_size": bool(bad_ok),
            "mass": ball_mass <= self.c_mass * f_norm / self.alpha * (1 + 1e-12),
            "overlap": int(covered.max(initial=0)) <= min(self.overlap, self.overlap_bound),
            "mean_zero": bool(mean_ok),
        }


def _cube_center(space: GridSpace, cube: np.ndarray) -> int:
    """Node at offset m // 2 along each axis of the cube."""
    if space.dim == 1:
        return int(cube[cube.size // 2])
    side = int(round(math.sqrt(cube.size)))
    return int(cube.reshape(side, side)[side // 2, side // 2])


def cz_decompose(space: GridSpace, f: np.ndarray, alpha: float) -> CZDecomposition:
    """Stopping-time decomposition over the dyadic cube tree.

    Maximal cubes with average |f| above alpha are selected top-down. On each
    selected cube b_i = (f - avg f) 1_Q; g keeps f elsewhere and the cube
    averages inside. Balls B(x_i, r_i) circumscribe the cubes.

    Raises:
        DecompositionError: alpha <= ||f||_1 / mu(X), or unequal node counts
            per axis (cubes would not shrink to single nodes).
    """
    f = np.asarray(f, dtype=float)
    mu = space.node_measure
    f_norm = float(np.sum(np.abs(f) * mu))
    if alpha <= f_norm / space.total_measure:
        raise DecompositionError(
            f"alpha={alpha} must exceed ||f||_1/mu(X) = {f_norm / space.total_measure:.6g}"
        )
    if len(set(space.nodes_per_axis)) != 1:
        raise DecompositionError("cz_decompose needs the same node count on every axis")

    covered = np.zeros(space.n_nodes, dtype=bool)
    good = f.copy()
    bad = []
    h = max(space.spacing)
    rho = distance_matrix(space)
    for level in range(space.max_dyadic_level + 1):
        cubes = dyadic_cubes(space, level)
        weights = mu[cubes]
        averages = np.sum(np.abs(f[cubes]) * weights, axis=1) / np.sum(weights, axis=1)
        for cube, average in zip(cubes, averages):
            if average <= alpha or covered[cube[0]]:
                continue
            covered[cube] = True
            mean = float(np.sum(f[cube] * mu[cube]) / np.sum(mu[cube]))
            good[cube] = mean
            center = _cube_center(space, cube)
            bad.append(
                BadPart(
                    cube=cube,
                    values=f[cube] - mean,
                    center=center,
                    radius=float(rho[center, cube].max() + h / 2),
                    level=level,
                )
            )

    overlap = 0
    c_mass = 1.0
    if bad:
        counts = np.zeros(space.n_nodes, dtype=int)
        for part in bad:
            ball = rho[part.center] < part.radius
            counts[ball] += 1
            c_mass = max(c_mass, float(np.sum(mu[ball]) / np.sum(mu[part.cube])))
        overlap = int(counts.max())

    logger.info(f"CZ decomposition at alpha={alpha:.4g}: {len(bad)} cubes, overlap {overlap}")
    return CZDecomposition(
        space=space,
        alpha=alpha,
        good=good,
        bad=bad,
        c_good=2.0**space.dim,
        c_bad=2.0 ** (space.dim + 1),
        c_mass=c_mass,
        overlap=overlap,
    )


def weak_l1_norm(f: np.ndarray, measure: np.ndarray) -> float:
    """sup over alpha of alpha * mu{|f| > alpha}, exact over the values of |f|."""
    magnitude = np.abs(np.asarray(f)).ravel()
    order = np.argsort(-magnitude, kind="stable")
    cumulative = np.cumsum(np.asarray(measure, dtype=float).ravel()[order])
    products = magnitude[order] * cumulative
    return float(products.max()) if products.size else 0.0


class NormKind(str, enum.Enum):
    WEAK11_LOWER = "weak11_lower"
    P_TO_P_LOWER = "p_to_p_lower"
    TWO_NORM_EXACT = "two_norm_exact"


@dataclass
class NormEstimate:
    kind: NormKind
    value: float
    witness: np.ndarray
    method: dict[str, Any] = field(default_factory=dict)

    def reproduce(self, T: DiscreteOperator) -> float:
        """Recompute the estimate by applying T to the stored witness."""
        mu_in = T.space.measure(T.domain)
        mu_out = T.space.measure(T.codomain)
        image = T.apply(self.witness)
        if self.kind is NormKind.WEAK11_LOWER:
            return weak_l1_norm(image, mu_out) / float(np.sum(np.abs(self.witness) * mu_in))
        p = self.method["p"]
        return _lp(image, mu_out, p) / _lp(self.witness, mu_in, p)


def _lp(u: np.ndarray, mu: np.ndarray, p: float) -> float:
    if math.isinf(p):
        return float(np.max(np.abs(u)))
    return float(np.sum(np.abs(u) ** p * mu) ** (1 / p))


def weak_operator_lower(kernel: KernelMatrix) -> NormEstimate:
    """sup_y ||K(., y)||_{1,w}: T applied to the normalized deltas e_y / mu_y."""
    mu_out = kernel.space.measure(kernel.codomain)
    mu_in = kernel.space.measure(kernel.domain)
    values = [weak_l1_norm(kernel.values[:, y], mu_out) for y in range(kernel.values.shape[1])]
    best = int(np.argmax(values)) if values else 0
    witness = np.zeros(kernel.values.shape[1])
    if values:
        witness[best] = 1.0 / mu_in[best]
    return NormEstimate(
        kind=NormKind.WEAK11_LOWER,
        value=max(values, default=0.0),
        witness=witness,
        method={"input": "delta", "column": best},
    )


def _dual(y: np.ndarray, p: float) -> np.ndarray:
    """Unit-norm dual vector of y in l^p (so <dual, y> = ||y||_p)."""
    magnitude = np.abs(y)
    norm = np.sum(magnitude**p) ** (1 / p)
    if norm == 0:
        return np.zeros_like(y)
    phase = np.where(magnitude > 0, np.conj(y) / np.where(magnitude > 0, magnitude, 1), 0)
    return (magnitude / norm) ** (p - 1) * phase


def lp_norm_estimate(
    T: DiscreteOperator,
    p: float,
    restarts: int = 8,
    seed: int = 0,
    iterations: int = 200,
) -> NormEstimate:
    """||T||_{L^p(mu) -> L^p(mu)}.

    Exact for p in {1, 2, inf}; for other p a lower bound from the dual power
    iteration on D^{1/p} T D^{-1/p}, started from the best unit column and
    from random vectors.

    Raises:
        DecompositionError: p outside [1, inf].
    """
    if not 1 <= p <= math.inf:
        raise DecompositionError(f"p must lie in [1, inf], got {p}")
    mu_in = T.space.measure(T.domain)
    mu_out = T.space.measure(T.codomain)
    matrix = T.dense()

    if p == 1:
        sums = np.sum(np.abs(matrix) * mu_out[:, None], axis=0) / mu_in
        best = int(np.argmax(sums))
        witness = np.zeros(matrix.shape[1])
        witness[best] = 1.0
        return NormEstimate(NormKind.P_TO_P_LOWER, float(sums[best]), witness, {"p": p, "exact": True})
    if math.isinf(p):
        sums = np.sum(np.abs(matrix), axis=1)
        best = int(np.argmax(sums))
        row = matrix[best]
        magnitude = np.abs(row)
        witness = np.where(magnitude > 0, np.conj(row) / np.where(magnitude > 0, magnitude, 1), 1.0)
        return NormEstimate(NormKind.P_TO_P_LOWER, float(sums[best]), witness, {"p": p, "exact": True})

    left, right = mu_out ** (1 / p), mu_in ** (-1 / p)
    B = left[:, None] * matrix * right[None, :]
    if p == 2:
        _, singular, vh = np.linalg.svd(B)
        witness = np.conj(vh[0]) * right
        return NormEstimate(NormKind.TWO_NORM_EXACT, float(singular[0]), witness, {"p": p, "exact": True})

    q = p / (p - 1)
    column_norms = np.sum(np.abs(B) ** p, axis=0) ** (1 / p)
    starts = [np.eye(B.shape[1])[int(np.argmax(column_norms))]]
    rng = np.random.default_rng(seed)
    starts += [rng.standard_normal(B.shape[1]) for _ in range(restarts)]

    best_value, best_x = 0.0, starts[0]
    for x in starts:
        x = x / np.sum(np.abs(x) ** p) ** (1 / p)
        value = float(np.sum(np.abs(B @ x) ** p) ** (1 / p))
        for _ in range(iterations):
            x_new = _dual(B.T @ _dual(B @ x, p), q)
            value_new = float(np.sum(np.abs(B @ x_new) ** p) ** (1 / p))
            if value_new <= value * (1 + 1e-12):
                break
            x, value = x_new, value_new
        if value > best_value:
            best_value, best_x = value, x
    return NormEstimate(
        NormKind.P_TO_P_LOWER,
        best_value,
        best_x * right,
        {"p": p, "exact": False, "restarts": restarts, "seed": seed},
    )


def theorem1_rhs(
    W: float,
    delta: float,
    T_p0_norm: float,
    S_q0_norm: float,
    p0: float,
    q0: float,
    C_fit: float = 1.0,
    dim: int = 1,
) -> float:
    """C (1 + delta)^d (W + ||T||_p0 + ||S||_q0^q0 ||T||_p0^(1 - q0))."""
    if min(W, delta, T_p0_norm, S_q0_norm, C_fit) < 0:
        raise DecompositionError("theorem1_rhs inputs must be nonnegative")
    if not (1 < p0 < math.inf and 1 < q0 < math.inf):
        raise DecompositionError(f"p0 and q0 must lie in (1, inf), got {p0}, {q0}")
    if T_p0_norm == 0:
        mixed = 0.0 if S_q0_norm == 0 else math.inf
    else:
        mixed = S_q0_norm**q0 * T_p0_norm ** (1 - q0)
    return C_fit * (1 + delta) ** dim * (W + T_p0_norm + mixed)


def fit_theorem1_constant(instances: Sequence[tuple[float, float]]) -> float:
    """Smallest C with weak <= C * rhs over (weak, rhs) pairs."""
    ratios = [weak / rhs for weak, rhs in instances if rhs > 0]
    if not ratios:
        raise DecompositionError("no instance with a positive right-hand side")
    return max(ratios)


@dataclass
class CoherenceReport:
    C_fit: float
    ratios: list[float]
    slack: float
    passed: bool


def theorem1_coherence(
    fit_instances: Sequence[tuple[float, float]],
    held_out: Sequence[tuple[float, float]],
    slack: float = 1.2,
) -> CoherenceReport:
    """Fit C on some instances, then require weak <= slack * C * rhs on the rest."""
    C_fit = fit_theorem1_constant(fit_instances)
    ratios = [weak / (C_fit * rhs) if rhs > 0 else math.inf for weak, rhs in held_out]
    return CoherenceReport(
        C_fit=C_fit, ratios=ratios, slack=slack, passed=all(r <= slack for r in ratios)
    )


def restrict_extend(T: DiscreteOperator, region: Region) -> DiscreteOperator:
    """1_Omega T (1_Omega f) as an operator on the whole grid."""
    return compose(region.projection(T.codomain), T, region.projection(T.domain))


def column_l1_norm(kernel: KernelMatrix) -> float:
    """max_y ||K(., y)||_1, the strong counterpart of weak_operator_lower."""
    mu_out = kernel.space.measure(kernel.codomain)
    return float(np.max(np.sum(np.abs(kernel.values) * mu_out[:, None], axis=0)))


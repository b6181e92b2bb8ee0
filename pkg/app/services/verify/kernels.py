"""Kernel extraction and pointwise kernel bounds: Gaussian fits, 2->inf and
1->inf norms, complex times, Davies-Gaffney decay and the Riesz L^2 bound."""

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from app.core.config import settings
from app.core.logging import logger
from app.models.exceptions import VerificationError
from app.models.media import CoefficientField, Cutoff, Region, ellipticity_check
from app.models.operators import DiscreteOperator, SpectralDecomposition
from app.models.space import GridSpace, Stagger, distance_matrix
from app.services.assemble import compose, discrete_gradient
from app.services.spectral import inv_sqrt, propagator


@dataclass(eq=False)
class KernelMatrix:
    """K with Tu(x) = sum_y K(x, y) u(y) mu_y."""

    space: GridSpace
    values: np.ndarray
    domain: Stagger = Stagger.NODES
    codomain: Stagger = Stagger.NODES
    tags: dict = field(default_factory=dict)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.values @ (u * self.space.measure(self.domain))

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def distances(self) -> np.ndarray:
        return distance_matrix(self.space, self.codomain, self.domain)


def kernel_of(T: DiscreteOperator, **tags) -> KernelMatrix:
    """Columnwise K(x, y) = (T e_y)(x) / mu_y."""
    mu_in = T.space.measure(T.domain)
    return KernelMatrix(
        space=T.space,
        values=T.dense() / mu_in[None, :],
        domain=T.domain,
        codomain=T.codomain,
        tags={"operator": T.tag, **tags},
    )


def localize(space: GridSpace, localizer: Cutoff | Region | None) -> np.ndarray:
    """Node samples of a cutoff, node mask of a region, or ones."""
    if localizer is None:
        return np.ones(space.n_nodes)
    if isinstance(localizer, Region):
        return localizer.node_mask.astype(float)
    return localizer.node_samples(space)


def free_heat_kernel(space: GridSpace, t: float, images: int = 3) -> np.ndarray:
    """Closed-form heat kernel of -Laplace on R^d, periodized over the box."""
    coords = space.node_coords
    kernel = np.ones((space.n_nodes, space.n_nodes))
    for k in range(space.dim):
        delta = coords[:, None, k] - coords[None, :, k]
        axis = np.zeros_like(delta)
        shifts = range(-images, images + 1) if space.periodic else (0,)
        for m in shifts:
            axis += np.exp(-((delta + m * space.extent[k]) ** 2) / (4 * t))
        kernel *= axis / math.sqrt(4 * math.pi * t)
    return kernel


def heat_kernel_deviation(kernel: KernelMatrix, t: float, radius_factor: float = 6.0) -> float:
    """max |K - K_exact| / max |K_exact| over pairs with |x - y| <= 6 sqrt(t)."""
    exact = free_heat_kernel(kernel.space, t)
    near = kernel.distances() <= radius_factor * math.sqrt(t)
    return float(np.max(np.abs(kernel.values - exact)[near]) / np.max(np.abs(exact[near])))


def _masked_log(kernel: KernelMatrix, noise_floor: float):
    magnitude = np.abs(kernel.values)
    peak = magnitude.max() if magnitude.size else 0.0
    if peak == 0:
        return None
    mask = magnitude > noise_floor * peak
    return np.log(magnitude[mask]), kernel.distances()[mask] ** 2


@dataclass
class GaussianFit:
    t_grid: list[float]
    c_grid: list[float]
    constants: list[float]
    with_growth_factor: bool
    reference_c: float
    reference_constant: float
    per_t: list[float]
    running: list[float]
    growth_slope: float
    validity_window: tuple[float, float]
    flagged_times: list[float] = field(default_factory=list)


def gaussian_fit(
    kernels: Sequence[KernelMatrix],
    t_grid: Sequence[float],
    with_growth_factor: bool,
    c_grid: Sequence[float] | None = None,
    reference_c: float = settings.REFERENCE_DECAY,
    noise_floor: float = settings.NOISE_FLOOR,
) -> GaussianFit:
    """Smallest C(c) with |K_t| <= C t^-d/2 (1+t)^d/2 e^{-c|x-y|^2/t} on the grid.

    Without the growth factor the (1+t)^d/2 term is dropped. ``running`` is
    C(c*) over nested windows t <= t_max and ``growth_slope`` its log-log
    slope over the upper half of the t grid.

    Raises:
        VerificationError: Empty t grid or mismatched kernel count.
    """
    if len(t_grid) == 0:
        raise VerificationError("gaussian_fit needs a non-empty t grid")
    if len(kernels) != len(t_grid):
        raise VerificationError(f"{len(kernels)} kernels for {len(t_grid)} times")
    if c_grid is None:
        c_grid = np.linspace(1 / 64, 1 / 2, 32)
    c_values = np.union1d(np.asarray(c_grid, dtype=float), [reference_c])

    space = kernels[0].space
    half_dim = space.dim / 2
    log_c = np.full((len(t_grid), c_values.size), -np.inf)
    for i, (kernel, t) in enumerate(zip(kernels, t_grid)):
        masked = _masked_log(kernel, noise_floor)
        if masked is None:
            continue
        log_k, rho2 = masked
        normalizer = half_dim * math.log(t)
        if with_growth_factor:
            normalizer -= half_dim * math.log1p(t)
        for j, c in enumerate(c_values):
            log_c[i, j] = np.max(log_k + c * rho2 / t) + normalizer

    constants = np.exp(log_c.max(axis=0))
    ref_index = int(np.searchsorted(c_values, reference_c))
    per_t = np.exp(log_c[:, ref_index])
    running = np.maximum.accumulate(per_t)

    growth_slope = 0.0
    upper = slice(len(t_grid) // 2, None)
    log_t, log_run = np.log(np.asarray(t_grid)[upper]), np.log(running[upper])
    if log_t.size >= 2 and np.all(np.isfinite(log_run)):
        growth_slope = float(np.polyfit(log_t, log_run, 1)[0])

    low, high = space.time_window
    flagged = [float(t) for t in t_grid if not low <= t <= high]
    if flagged:
        logger.warning(f"Gaussian fit: {len(flagged)} times outside [{low:.3g}, {high:.3g}]")

    return GaussianFit(
        t_grid=[float(t) for t in t_grid],
        c_grid=c_values.tolist(),
        constants=constants.tolist(),
        with_growth_factor=with_growth_factor,
        reference_c=reference_c,
        reference_constant=float(constants[ref_index]),
        per_t=per_t.tolist(),
        running=running.tolist(),
        growth_slope=growth_slope,
        validity_window=(low, high),
        flagged_times=flagged,
    )


@dataclass
class SupBoundsTable:
    t_grid: list[float]
    two_to_inf: list[float]
    one_to_inf: list[float]
    two_to_inf_normalized: list[float]
    one_to_inf_normalized: list[float]

    @property
    def sup_two_to_inf(self) -> float:
        return max(self.two_to_inf_normalized, default=0.0)

    @property
    def sup_one_to_inf(self) -> float:
        return max(self.one_to_inf_normalized, default=0.0)


def two_to_inf_norm(space: GridSpace, matrix: np.ndarray) -> float:
    """||T||_{L^2(mu) -> L^inf} = max_x (sum_y |T_xy|^2 / mu_y)^1/2."""
    return float(np.sqrt(np.max(np.sum(np.abs(matrix) ** 2 / space.node_measure, axis=1))))


def sup_bounds(
    decomposition: SpectralDecomposition,
    localizer: Cutoff | Region | None,
    t_grid: Sequence[float],
) -> SupBoundsTable:
    """||M S_t||_{2->inf} and ||M S_t M||_{1->inf} with the normalizers
    t^{d/4}(1+t)^{-d/4} and t^{d/2}(1+t)^{-d/2}."""
    space = decomposition.space
    chi = localize(space, localizer)
    quarter = space.dim / 4
    table = SupBoundsTable([], [], [], [], [])
    for t in t_grid:
        semigroup = propagator(decomposition, t).dense()
        left = chi[:, None] * semigroup
        two = two_to_inf_norm(space, left)
        one = float(np.max(np.abs(left * chi[None, :] / space.node_measure[None, :])))
        table.t_grid.append(float(t))
        table.two_to_inf.append(two)
        table.one_to_inf.append(one)
        table.two_to_inf_normalized.append(two * (t / (1 + t)) ** quarter)
        table.one_to_inf_normalized.append(one * (t / (1 + t)) ** (2 * quarter))
    return table


@dataclass
class ComplexTimeTable:
    z_grid: list[complex]
    values: list[float]
    decay: float
    sup: float
    real_axis_sup: float


def default_z_grid(radii: Sequence[float], angles: Sequence[float] | None = None) -> list[complex]:
    if angles is None:
        angles = (0.0, math.pi / 6, -math.pi / 6, math.pi / 3, -math.pi / 3)
    return [r * complex(math.cos(a), math.sin(a)) for a in angles for r in radii]


def complex_time_check(
    decomposition: SpectralDecomposition,
    localizer: Cutoff | Region | None,
    z_grid: Sequence[complex],
    epsilon_damp: float | None = None,
    decay: float = 1 / 16,
    noise_floor: float = settings.NOISE_FLOOR,
) -> ComplexTimeTable:
    """max |p_z(x,y) e^{-eps z}| (Re z)^{d/2} exp(c |x-y|^2 cos(arg z) / |z|).

    p_z is the kernel of M e^{-zA} M, recovered from e^{-zH} by undoing the
    shift of H.
    """
    space = decomposition.space
    chi = localize(space, localizer)
    if epsilon_damp is None:
        epsilon_damp = decomposition.epsilon
    rho2 = distance_matrix(space) ** 2

    values = []
    for z in z_grid:
        z = complex(z)
        if z.real <= 0:
            raise VerificationError(f"complex_time_check needs Re z > 0, got {z}")
        kernel = chi[:, None] * propagator(decomposition, z).dense() * chi[None, :]
        magnitude = np.abs(kernel) / space.node_measure[None, :]
        peak = magnitude.max()
        if peak == 0:
            values.append(0.0)
            continue
        mask = magnitude > noise_floor * peak
        log_value = (
            np.log(magnitude[mask])
            + decay * rho2[mask] * math.cos(np.angle(z)) / abs(z)
            + z.real * (decomposition.epsilon - epsilon_damp)
            + space.dim / 2 * math.log(z.real)
        )
        values.append(float(np.exp(np.max(log_value))))

    real = [v for z, v in zip(z_grid, values) if complex(z).imag == 0]
    return ComplexTimeTable(
        z_grid=[complex(z) for z in z_grid],
        values=values,
        decay=decay,
        sup=max(values, default=0.0),
        real_axis_sup=max(real, default=0.0),
    )


def set_distance(space: GridSpace, E: np.ndarray, F: np.ndarray) -> float:
    if len(E) == 0 or len(F) == 0:
        return math.inf
    return float(distance_matrix(space)[np.ix_(F, E)].min())


def davies_gaffney(
    decomposition: SpectralDecomposition,
    localizer: Cutoff | Region | None,
    E: np.ndarray,
    F: np.ndarray,
    t: float,
) -> float:
    """||P_F M e^{-tH} P_E||_{2->inf}."""
    space = decomposition.space
    chi = localize(space, localizer)
    E, F = np.asarray(E, dtype=int), np.asarray(F, dtype=int)
    if E.size == 0 or F.size == 0:
        return 0.0
    block = (chi[:, None] * propagator(decomposition, t).dense())[np.ix_(F, E)]
    return float(np.sqrt(np.max(np.sum(np.abs(block) ** 2 / space.node_measure[E], axis=1))))


@dataclass
class DaviesGaffneyFit:
    omega: float
    constant: float
    samples: list[tuple[float, float, float]]


def fit_davies_gaffney(
    samples: Sequence[tuple[float, float, float]], dim: int
) -> DaviesGaffneyFit:
    """Regress log(value t^{d/4}) on d(E,F)^2 / 4t; the slope is -1/omega.

    Args:
        samples: (distance, t, value) triples; zero distances and zero values
            are ignored.
        dim: Space dimension
    """
    usable = [(d, t, v) for d, t, v in samples if d > 0 and v > 0 and math.isfinite(d)]
    if len(usable) < 2:
        raise VerificationError("Davies-Gaffney fit needs two samples at positive distance")
    x = np.array([d**2 / (4 * t) for d, t, _ in usable])
    y = np.array([math.log(v) + dim / 4 * math.log(t) for _, t, v in usable])
    if np.ptp(x) == 0:
        raise VerificationError("Davies-Gaffney fit needs distinct d(E,F)^2/t values")
    slope, intercept = np.polyfit(x, y, 1)
    omega = -1.0 / slope if slope < 0 else math.inf
    return DaviesGaffneyFit(omega=float(omega), constant=float(math.exp(intercept)), samples=usable)


@dataclass
class RieszL2Report:
    norms: list[float]
    bound: float
    passed: bool
    margin: float
    note: str = "squared form: ||M G u||^2 <= ||chi||^2/mu * ||H^1/2 u||^2"


def riesz_l2_check(
    decomposition: SpectralDecomposition,
    field: CoefficientField,
    cutoff: Cutoff,
    mu: float,
) -> RieszL2Report:
    """||M_chi G_k H^-1/2||_{2->2} <= ||chi||_inf / sqrt(mu) for every axis.

    Raises:
        VerificationError: a(x) >= mu I fails on the cells where chi > 0.
    """
    space = decomposition.space
    report = ellipticity_check(field, space, cutoff, mu)
    if not report.passed:
        raise VerificationError(
            f"Ellipticity mu={mu} fails on {len(report.violations)} cells of {report.region}"
        )
    grads = discrete_gradient(space)
    root_inv = inv_sqrt(decomposition)
    left = np.sqrt(space.cell_measure)[:, None]
    right = 1.0 / np.sqrt(space.node_measure)[None, :]

    norms = []
    for axis in range(space.dim):
        riesz = compose(
            cutoff.operator(space, Stagger.CELLS), grads.operator(axis), root_inv
        ).dense()
        norms.append(float(np.linalg.norm(left * riesz * right, 2)) if riesz.size else 0.0)

    bound = cutoff.sup_norm / math.sqrt(mu)
    worst = max(norms, default=0.0)
    passed = worst <= bound * (1 + 1e-8)
    logger.info(f"Riesz L2: norms {norms}, bound {bound:.6g}")
    return RieszL2Report(
        norms=norms,
        bound=bound,
        passed=passed,
        margin=(bound - worst) / bound if bound > 0 else 0.0,
    )

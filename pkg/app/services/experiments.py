"""Experiment suites: one function per experiment kind.

Every suite takes the shared :class:`RunContext`, its validated parameter
model and a :class:`ResultLogger`, and reports numbers only through the
logger. Raised :class:`LabError` subclasses mark the experiment failed.
"""

import dataclasses
import math
import threading
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace

import numpy as np

from app.core.config import settings
from app.core.logging import logger
from app.models.exceptions import VerificationError
from app.models.media import (
    CoefficientField,
    Cutoff,
    Region,
    check_psd,
    ellipticity_check,
    make_cutoff,
    make_field,
    make_region,
)
from app.models.operators import DiscreteOperator, SpectralDecomposition
from app.models.space import GridSpace, Stagger, ball, build_grid, doubling_report
from app.schemas.experiments import (
    ExperimentConfig,
    ExperimentKind,
    Localizer,
    PresetBlock,
    RegionBlock,
)
from app.services.assemble import (
    assemble_form_operator,
    compose,
    discrete_gradient,
    form_energy,
    riesz_matrix,
    shift_identity,
)
from app.services.czkit import (
    column_l1_norm,
    cz_decompose,
    lp_norm_estimate,
    theorem1_coherence,
    theorem1_rhs,
    weak_l1_norm,
    weak_operator_lower,
)
from app.services.multiplier import (
    default_order,
    dyadic_partition,
    log_derivative_condition,
    make_multiplier,
    mihlin_sup,
)
from app.services.spectral import (
    SubordinationParams,
    apply_function,
    eigendecompose,
    fourier_calculus_crosscheck,
    inv_sqrt,
    inv_sqrt_subordination,
    propagator,
    required_panels,
)
from app.services.verify.kernels import (
    KernelMatrix,
    complex_time_check,
    davies_gaffney,
    default_z_grid,
    fit_davies_gaffney,
    gaussian_fit,
    heat_kernel_deviation,
    kernel_of,
    localize,
    riesz_l2_check,
    set_distance,
    sup_bounds,
    two_to_inf_norm,
)
from app.services.verify.moments import (
    dyadic_oscillation,
    fit_semigroup_moments,
    weighted_kernel_moment,
    weighted_semigroup_moment,
)
from app.services.verify.offdiagonal import dm_condition, off_diagonal_profile
from app.utils.results_log import ResultLogger


@dataclass(eq=False)
class RunContext:
    """Grid, field, cutoffs and lazily built operators shared by a run.

    The decompositions are built once under a lock; experiments running in
    worker threads share them read-only.
    """

    space: GridSpace
    field: CoefficientField
    cutoff: Cutoff
    cutoff_tilde: Cutoff
    region: Region | None
    epsilon: float = 1.0
    seed: int = 0
    blocks: dict = dataclasses.field(default_factory=dict)
    _lock: threading.Lock = dataclasses.field(default_factory=threading.Lock, repr=False)
    _cache: dict = dataclasses.field(default_factory=dict, repr=False)

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "RunContext":
        blocks = {
            "space": config.space,
            "coefficients": config.coefficients,
            "cutoff": config.cutoff,
            "cutoff_tilde": config.cutoff_tilde,
            "region": config.region,
        }
        return cls.from_blocks(config.grid(), blocks, config.epsilon, config.seed)

    @classmethod
    def from_blocks(
        cls, space: GridSpace, blocks: dict, epsilon: float, seed: int
    ) -> "RunContext":
        coefficients: PresetBlock = blocks["coefficients"]
        cutoff_block: PresetBlock = blocks["cutoff"]
        tilde_block: PresetBlock | None = blocks.get("cutoff_tilde")
        region_block: RegionBlock | None = blocks.get("region")

        cutoff = make_cutoff(cutoff_block.preset, cutoff_block.params, space)
        tilde = (
            make_cutoff(tilde_block.preset, tilde_block.params, space)
            if tilde_block is not None
            else cutoff
        )
        region = (
            make_region(space, region_block.lower, region_block.upper)
            if region_block is not None
            else None
        )
        return cls(
            space=space,
            field=make_field(coefficients.preset, coefficients.params),
            cutoff=cutoff,
            cutoff_tilde=tilde,
            region=region,
            epsilon=epsilon,
            seed=seed,
            blocks=blocks,
        )

    def refined(self, nodes_per_axis: int) -> "RunContext":
        """Same field, cutoffs and region on a grid with another node count."""
        block = self.blocks["space"]
        space = build_grid(block.dim, block.extent, nodes_per_axis, block.boundary)
        return RunContext.from_blocks(space, self.blocks, self.epsilon, self.seed)

    def _cached(self, key: str, build: Callable):
        with self._lock:
            if key not in self._cache:
                self._cache[key] = build()
            return self._cache[key]

    def operator_A(self) -> DiscreteOperator:
        return self._cached("A", lambda: assemble_form_operator(self.space, self.field))

    def operator_H(self) -> DiscreteOperator:
        A = self.operator_A()
        return self._cached("H", lambda: shift_identity(A, self.epsilon))

    def decomposition(self) -> SpectralDecomposition:
        """Eigensystem of H = A + eps I."""
        H = self.operator_H()
        return self._cached("H_decomposition", lambda: eigendecompose(H))

    def free_decomposition(self) -> SpectralDecomposition:
        """Eigensystem of A itself (no shift), for the growth of e^{-tA}."""
        A = self.operator_A()
        return self._cached("A_decomposition", lambda: eigendecompose(A))

    def localizer(self, which: Localizer) -> Cutoff | Region | None:
        if which is Localizer.REGION:
            if self.region is None:
                raise VerificationError("localizer 'region' needs a region block")
            return self.region
        if which is Localizer.CUTOFF:
            return self.cutoff
        return None

    def left_localizer(self, which: Localizer) -> Cutoff | Region | None:
        return self.cutoff_tilde if which is Localizer.CUTOFF else self.localizer(which)

    def x_samples(self, count: int, salt: int = 0) -> list[int]:
        """Up to ``count`` sorted nodes where chi = 1 (else chi > 0, else all)."""
        chi = localize(self.space, self.cutoff)
        candidates = np.flatnonzero(chi >= 1.0 - 1e-12)
        if candidates.size == 0:
            candidates = np.flatnonzero(chi > 0)
        if candidates.size == 0:
            candidates = np.arange(self.space.n_nodes)
        rng = np.random.default_rng(self.seed + salt)
        picked = rng.choice(candidates, size=min(count, candidates.size), replace=False)
        return sorted(int(x) for x in picked)


def _flag_outside(log: ResultLogger, values: Sequence[float], window: tuple[float, float], grid: str):
    low, high = window
    for value in values:
        if not low * (1 - 1e-9) <= value <= high * (1 + 1e-9):
            log.flag("outside_validity_window", value, grid=grid, low=low, high=high)


class _LazyKernels(Sequence):
    """Kernels of L e^{-tA} R built on access, so a long t grid never holds
    every dense kernel at once."""

    def __init__(self, space, decomposition, left, right, t_grid):
        self.space, self.decomposition = space, decomposition
        self.left, self.right, self.t_grid = left, right, list(t_grid)

    def __len__(self):
        return len(self.t_grid)

    def __getitem__(self, i):
        t = self.t_grid[i]
        semigroup = propagator(self.decomposition, t).dense()
        values = self.left[:, None] * semigroup * self.right[None, :]
        return KernelMatrix(
            space=self.space,
            values=values / self.space.node_measure[None, :],
            tags={"t": t},
        )


def _semigroup_kernels(ctx: RunContext, which: Localizer, t_grid) -> _LazyKernels:
    left = localize(ctx.space, ctx.left_localizer(which))
    right = localize(ctx.space, ctx.localizer(which))
    return _LazyKernels(ctx.space, ctx.free_decomposition(), left, right, t_grid)


def run_doubling(ctx: RunContext, params, log: ResultLogger) -> None:
    report = doubling_report(ctx.space, params.sample_count, ctx.seed, params.lambdas)
    log.constant("C0", report.C0)
    log.constant("C1", report.C1)
    log.constant("d_eff", report.d_eff, reference=ctx.space.dim)
    log.check("C0_finite", math.isfinite(report.C0), report.C0)

    rng = np.random.default_rng(ctx.seed + 1)
    low, high = report.r_window
    fresh = [
        report.holds(ctx.space, int(x), float(r), lam)
        for x, r in zip(
            rng.integers(0, ctx.space.n_nodes, size=params.sample_count),
            np.exp(rng.uniform(math.log(low), math.log(high), size=params.sample_count)),
        )
        for lam in report.lambdas
    ]
    log.check("doubling_fresh_samples", all(fresh), float(np.mean(fresh)), 1.0, asserted=False)


def run_assembly(ctx: RunContext, params, log: ResultLogger) -> None:
    space = ctx.space
    A = ctx.operator_A().dense()
    mu = space.node_measure
    stiffness = mu[:, None] * A
    scale = float(np.max(np.abs(stiffness))) or 1.0

    asymmetry = float(np.max(np.abs(stiffness - stiffness.T))) / scale
    log.check("mu_self_adjoint", asymmetry <= params.tolerance, asymmetry, params.tolerance)
    constants = float(np.max(np.abs(A @ np.ones(space.n_nodes)))) / (float(np.max(np.abs(A))) or 1.0)
    log.check("constants_in_kernel", constants <= params.tolerance, constants, params.tolerance)
    log.constant("min_field_eigenvalue", check_psd(ctx.field, space))

    rng = np.random.default_rng(ctx.seed)
    worst = 0.0
    for _ in range(params.random_probes):
        u = rng.standard_normal(space.n_nodes)
        energy = form_energy(space, ctx.field, u)
        quadratic = float(np.sum((A @ u) * u * mu))
        worst = max(worst, abs(energy - quadratic) / max(abs(energy), 1e-300))
    log.check("form_energy_consistency", worst <= params.tolerance, worst, params.tolerance)

    field_params = ctx.field.params
    if space.dim == 1 and space.periodic and ctx.field.preset_id == "identity":
        N = space.nodes_per_axis[0]
        h = space.spacing[0]
        k = np.arange(N)
        exact = np.sort(field_params["scale"] * (2 - 2 * np.cos(2 * np.pi * k / N)) / h**2)
        found = ctx.free_decomposition().eigenvalues
        floor = 1e-8 * exact[-1]
        error = float(np.max(np.abs(found - exact) / np.maximum(exact, floor)))
        log.check("closed_form_spectrum", error <= params.tolerance, error, params.tolerance, N=N)


def _relative_deviation(approx: np.ndarray, exact: np.ndarray) -> float:
    return float(np.max(np.abs(approx - exact)) / np.max(np.abs(exact)))


def _subordination_deviation(decomposition: SpectralDecomposition, tolerance: float) -> float:
    sub = SubordinationParams(tolerance=tolerance)
    sub = replace(sub, panels=required_panels(decomposition, sub))
    approx = inv_sqrt_subordination(decomposition, sub).dense()
    return _relative_deviation(approx, inv_sqrt(decomposition).dense())


def run_subordination(ctx: RunContext, params, log: ResultLogger) -> None:
    deviation = _subordination_deviation(ctx.decomposition(), params.tolerance)
    log.check("configured_H", deviation <= params.tolerance, deviation, params.tolerance)

    rng = np.random.default_rng(ctx.seed)
    sizes = [2**k for k in range(4, 13) if 2**k <= params.max_size] or [params.max_size]
    worst = deviation
    for trial in range(params.trials):
        n = sizes[trial % len(sizes)]
        space = build_grid(1, 1.0, n)
        B = rng.standard_normal((n, n))
        matrix = B @ B.T / n + np.eye(n)
        H = DiscreteOperator(space=space, tag=f"R{trial}", matrix=matrix, epsilon=1.0)
        deviation = _subordination_deviation(eigendecompose(H), params.tolerance)
        worst = max(worst, deviation)
        log.check("random_psd_plus_identity", deviation <= params.tolerance, deviation, params.tolerance, trial=trial, n=n)
    log.constant("max_relative_deviation", worst, params.tolerance)


def _log_gaussian(log: ResultLogger, fit, label: str) -> None:
    for c, constant in zip(fit.c_grid, fit.constants):
        log.log(f"C{label}", constant, c=c)
    for t, value, running in zip(fit.t_grid, fit.per_t, fit.running):
        log.log(f"C_ref{label}_at_t", value, t=t, c=fit.reference_c)
        log.log(f"C_ref{label}_running", running, t_max=t, c=fit.reference_c)
    log.constant(f"C_ref{label}", fit.reference_constant, c=fit.reference_c)
    log.constant(f"growth_slope{label}", fit.growth_slope)


def _doubling_stability(t_grid: Sequence[float], running: Sequence[float]) -> float:
    """running C at t_max over running C at the largest t <= t_max / 2."""
    t_max = t_grid[-1]
    earlier = [k for k, t in enumerate(t_grid) if t <= t_max / 2 * (1 + 1e-12)]
    if not earlier or running[earlier[-1]] == 0:
        return 1.0
    return running[-1] / running[earlier[-1]]


def run_gaussian(ctx: RunContext, params, log: ResultLogger) -> None:
    space = ctx.space
    t_grid = params.t_grid.resolve(space.time_window)
    _flag_outside(log, t_grid, space.time_window, "t_grid")
    kernels = _semigroup_kernels(ctx, params.localizer, t_grid)

    fit = gaussian_fit(kernels, t_grid, params.with_growth_factor, params.c_grid, params.reference_c)
    label = "" if params.with_growth_factor else "_no_factor"
    _log_gaussian(log, fit, label)
    log.check(
        "C_ref_finite", math.isfinite(fit.reference_constant), fit.reference_constant,
        asserted=params.assert_checks,
    )
    monotone = bool(np.all(np.diff(fit.constants) >= -1e-12 * max(fit.constants)))
    log.check("C_nondecreasing_in_c", monotone, float(monotone), 1.0)
    if fit.reference_constant > 0:
        log.constant(
            "divergence_ratio", fit.constants[-1] / fit.reference_constant, c_max=fit.c_grid[-1]
        )

    bare = None if params.with_growth_factor else fit
    if params.with_growth_factor:
        change = _doubling_stability(fit.t_grid, fit.running)
        log.check(
            "C_ref_stable_when_t_max_doubles", change <= 1.1, change, 1.1,
            asserted=params.assert_checks,
        )
        if params.compare_without_factor:
            bare = gaussian_fit(kernels, t_grid, False, params.c_grid, params.reference_c)
            _log_gaussian(log, bare, "_no_factor")

    check_slope = params.check_half_dim_slope
    if check_slope is None:
        check_slope = (
            ctx.field.preset_id == "indicator_region" and params.localizer is Localizer.REGION
        )
    if check_slope:
        if bare is None:
            bare = gaussian_fit(kernels, t_grid, False, params.c_grid, params.reference_c)
        target = space.dim / 2
        log.check(
            "growth_slope_no_factor", abs(bare.growth_slope - target) <= params.slope_tolerance,
            bare.growth_slope, target, asserted=params.assert_checks,
            tolerance=params.slope_tolerance,
        )

    if params.free_kernel_check:
        t0 = 25 * max(space.spacing) ** 2
        if ctx.field.preset_id != "identity" or ctx.field.params["scale"] != 1:
            log.flag("free_kernel_check_skipped", None, field=ctx.field.preset_id)
        else:
            kernel = kernel_of(propagator(ctx.free_decomposition(), t0), t=t0)
            deviation = heat_kernel_deviation(kernel, t0)
            log.check("free_heat_kernel_deviation", deviation <= 0.05, deviation, 0.05, t=t0)


def run_supbounds(ctx: RunContext, params, log: ResultLogger) -> None:
    window = ctx.space.time_window
    t_grid = params.t_grid.resolve(window)
    _flag_outside(log, t_grid, window, "t_grid")
    table = sup_bounds(ctx.free_decomposition(), ctx.localizer(params.localizer), t_grid)
    for k, t in enumerate(table.t_grid):
        log.log("two_to_inf", table.two_to_inf[k], t=t)
        log.log("two_to_inf_normalized", table.two_to_inf_normalized[k], t=t)
        log.log("one_to_inf", table.one_to_inf[k], t=t)
        log.log("one_to_inf_normalized", table.one_to_inf_normalized[k], t=t)
    log.constant("sup_two_to_inf_normalized", table.sup_two_to_inf)
    log.constant("sup_one_to_inf_normalized", table.sup_one_to_inf, (4 * math.pi) ** (-ctx.space.dim / 2))
    log.check("normalized_bounds_finite", math.isfinite(table.sup_one_to_inf), table.sup_one_to_inf)


def run_complex_time(ctx: RunContext, params, log: ResultLogger) -> None:
    window = ctx.space.time_window
    radii = params.radii.resolve(window)
    _flag_outside(log, radii, window, "radii")
    z_grid = default_z_grid(radii, params.angles)
    table = complex_time_check(
        ctx.decomposition(), ctx.localizer(params.localizer), z_grid, decay=params.decay
    )
    for z, value in zip(table.z_grid, table.values):
        log.log("complex_time_constant", value, z_re=z.real, z_im=z.imag, c=params.decay)
    log.constant("sup", table.sup)
    log.constant("real_axis_sup", table.real_axis_sup)
    log.check(
        "sector_within_10x_real_axis", table.sup <= 10 * table.real_axis_sup, table.sup,
        10 * table.real_axis_sup, asserted=params.assert_checks,
    )


def run_davies_gaffney(ctx: RunContext, params, log: ResultLogger) -> None:
    space = ctx.space
    window = space.time_window
    t_grid = params.t_grid.resolve(window)
    _flag_outside(log, t_grid, window, "t_grid")
    decomposition = ctx.free_decomposition()
    localizer = ctx.localizer(params.localizer)
    chi = localize(space, localizer)

    h = max(space.spacing)
    x0 = ctx.x_samples(1)[0]
    r_source = params.source_radius_cells * h
    E = ball(space, x0, r_source)
    rho = space.distances_from(x0)
    step = (min(space.extent) / 2 - r_source) / params.distances

    samples = []
    for t in t_grid:
        full = two_to_inf_norm(space, chi[:, None] * propagator(decomposition, t).dense())
        adjacent = davies_gaffney(decomposition, localizer, E, E, t)
        log.check("adjacent_below_full_norm", adjacent <= full * (1 + 1e-12), adjacent, full, t=t)
        for k in range(1, params.distances):
            start = r_source + k * step
            F = np.flatnonzero((rho >= start) & (rho < start + h))
            if F.size == 0:
                continue
            distance = set_distance(space, E, F)
            value = davies_gaffney(decomposition, localizer, E, F, t)
            log.log("davies_gaffney", value, t=t, distance=distance)
            if value > 1e-12 * adjacent:
                samples.append((distance, t, value))

    try:
        fit = fit_davies_gaffney(samples, space.dim)
    except VerificationError as e:
        log.flag("davies_gaffney_fit_skipped", len(samples), reason=e.reason)
        return
    log.constant("omega", fit.omega, reference=1.0)
    log.constant("constant", fit.constant)
    log.check("omega_finite", math.isfinite(fit.omega), fit.omega, asserted=False)


def run_offdiag(ctx: RunContext, params, log: ResultLogger) -> None:
    window = ctx.space.length_window
    t_grid = params.t_grid.resolve(window)
    _flag_outside(log, t_grid, window, "t_grid")
    profile = off_diagonal_profile(
        ctx.decomposition(),
        ctx.cutoff,
        t_grid,
        ctx.x_samples(params.x_samples),
        q0=params.q0,
        j_max=params.j_max,
        annuli=params.annuli,
        seed=ctx.seed,
        family=params.family,
    )
    for j in sorted(profile.g):
        log.log("g", profile.g[j], j=j, weight=profile.weights[j])
    for j, partial in zip(sorted(profile.g), profile.partial_sums):
        log.log("weighted_partial_sum", partial, j=j)
    log.constant("weighted_sum", profile.weighted_sum)
    log.constant("saturation", profile.saturation, 0.01)
    log.constant("tail_slope", profile.tail_slope)
    if profile.skipped:
        log.flag("empty_annuli", len(profile.skipped))
    log.constant("annuli_below_noise_floor", len(profile.below_noise_floor))
    for j in profile.below_noise_floor:
        log.log("g_below_noise_floor", 0.0, settings.NOISE_FLOOR, j=j)

    # zeros past the noise floor pass the decrease trivially
    g = [profile.g[j] for j in sorted(profile.g) if j >= 2]
    decreasing = all(b < a or b == 0 for a, b in zip(g, g[1:]))
    log.check(
        "g_decreasing_from_j2", decreasing, float(decreasing), 1.0,
        asserted=params.assert_checks, floored=len(profile.below_noise_floor),
    )
    log.check(
        "weighted_sum_saturates", profile.saturation < 0.01, profile.saturation, 0.01,
        asserted=params.assert_checks,
    )


@dataclass
class _Instance:
    T: DiscreteOperator
    S: DiscreteOperator
    family: Callable[[float], DiscreteOperator]
    label: str


def _multiplier_instance(ctx: RunContext, decomposition, block: PresetBlock) -> _Instance:
    F = make_multiplier(block.preset, block.params)
    FH = apply_function(decomposition, F)
    M = ctx.cutoff.operator(ctx.space)
    return _Instance(
        T=compose(M, FH, M),
        S=compose(M, FH),
        family=lambda t: compose(propagator(decomposition, t * t), M),
        label=block.preset,
    )


def _riesz_instance(ctx: RunContext, decomposition, axis: int = 0) -> _Instance:
    space = ctx.space
    M = ctx.cutoff.operator(space)
    S = compose(
        ctx.cutoff.operator(space, Stagger.CELLS),
        discrete_gradient(space).operator(axis),
        inv_sqrt(decomposition),
    )
    return _Instance(
        T=riesz_matrix(space, decomposition, ctx.cutoff, axis),
        S=S,
        family=lambda t: compose(propagator(decomposition, t * t), M),
        label=f"riesz_{axis}",
    )


def run_dm(ctx: RunContext, params, log: ResultLogger) -> None:
    window = ctx.space.length_window
    t_grid = params.t_grid.resolve(window)
    _flag_outside(log, t_grid, window, "t_grid")
    instance = _multiplier_instance(ctx, ctx.decomposition(), params.multiplier)
    report = dm_condition(instance.T, instance.S, instance.family, params.delta, t_grid)
    for t, kernel, operator in zip(report.t_grid, report.kernel_values, report.operator_values):
        log.log("kernel_form", kernel, t=t, delta=params.delta)
        log.log("operator_form", operator, t=t, delta=params.delta)
    log.constant("W", report.W)
    log.constant("W_operator", report.W_operator, report.W)
    log.constant("stability", report.stability, 2.0)
    log.check("operator_form_below_kernel_form", report.W_operator <= report.W + 1e-9, report.W_operator, report.W)
    log.check("W_stable_across_t", report.stability < 2.0, report.stability, 2.0, asserted=params.assert_checks)


def run_multiplier_osc(ctx: RunContext, params, log: ResultLogger) -> None:
    window = ctx.space.length_window
    t_grid = params.t_grid.resolve(window)
    _flag_outside(log, t_grid, window, "t_grid")
    s = params.s if params.s is not None else default_order(ctx.space.dim)
    F = make_multiplier(params.multiplier.preset, params.multiplier.params)
    partition = dyadic_partition(params.step_sharpness)
    table = dyadic_oscillation(
        F, partition, s, ctx.decomposition(), ctx.cutoff, t_grid, params.n_range
    )
    for i, t in enumerate(table.t_grid):
        for k, n in enumerate(table.n_values):
            log.log("I", table.values[i, k], table.reference[i, k] * table.mihlin, t=t, n=n)
        log.log("row_sum", table.row_sums[i], t=t)
    log.constant("fitted_constant", table.constant)
    log.constant("mihlin_sup", table.mihlin, s=s)
    log.constant("stability", table.stability, 2.0)
    gap = table.summation_gap
    scale = max(1.0, max(table.row_sums, default=0.0))
    log.check("summation_orders_agree", gap <= 1e-10 * scale, gap, 1e-10 * scale)
    log.check("row_sums_stable_across_t", table.stability < 2.0, table.stability, 2.0, asserted=params.assert_checks)


def run_mihlin(ctx: RunContext, params, log: ResultLogger) -> None:
    s = params.s if params.s is not None else default_order(ctx.space.dim)
    F = make_multiplier(params.multiplier.preset, params.multiplier.params)
    report = mihlin_sup(F, dyadic_partition(params.step_sharpness), s, params.scales)
    for t, value in report.table:
        log.log("holder_norm", value, t=t, s=s)
    log.constant("mihlin_sup", report.value, s=s)
    if report.edge_growth:
        log.flag("edge_growth", report.value)
    for k, value in enumerate(log_derivative_condition(F, params.log_derivatives)):
        log.log("log_derivative_sup", value, k=k)
    log.check("mihlin_sup_finite", math.isfinite(report.value), report.value)


def run_kernel_moment(ctx: RunContext, params, log: ResultLogger) -> None:
    decomposition = ctx.decomposition()
    cutoff = ctx.localizer(params.localizer)
    y_samples = ctx.x_samples(params.y_samples)
    ratios = []
    for r in params.radii:
        if params.multiplier is not None:
            F = make_multiplier(params.multiplier.preset, params.multiplier.params)
        else:
            F = make_multiplier("dyadic_bump", {"scale": r})
        report = weighted_kernel_moment(
            decomposition, F, cutoff, r, params.s, y_samples, params.eps_s
        )
        log.log("moment", report.lhs, report.rhs, r=r, s=params.s)
        if report.lhs > 0:
            ratios.append(report.ratio)
    if ratios:
        spread = max(ratios) / float(np.median(ratios))
        log.constant("max_ratio", max(ratios))
        log.check("ratio_within_10x_median", spread < 10.0, spread, 10.0, asserted=False)


def run_semigroup_moment(ctx: RunContext, params, log: ResultLogger) -> None:
    space = ctx.space
    window = space.time_window
    s_grid = params.s_grid.resolve(window)
    _flag_outside(log, s_grid, window, "s_grid")
    decomposition = ctx.decomposition()
    t = params.t if params.t is not None else 2 * max(space.spacing)

    for gradient in (False, True):
        samples = []
        for s in s_grid:
            for beta in params.betas:
                for probe in params.probes:
                    for x in ctx.x_samples(params.x_samples):
                        try:
                            moment = weighted_semigroup_moment(
                                decomposition, ctx.cutoff, ctx.cutoff_tilde, x, t, s, beta,
                                gradient_flag=gradient, probe=probe,
                            )
                        except VerificationError:
                            log.flag("beta_out_of_range", beta, s=s, gradient=gradient)
                            continue
                        samples.append(moment)
                        log.log(
                            "moment", moment.lhs, moment.reference,
                            s=s, beta=beta, probe=probe, x=x, gradient=gradient,
                        )
        label = "gradient" if gradient else "plain"
        if not samples:
            continue
        fit = fit_semigroup_moments(samples)
        log.constant(f"C_{label}", fit.constant)
        log.check(f"spread_{label}", fit.spread < 3.0, fit.spread, 3.0, asserted=False)


def run_riesz(ctx: RunContext, params, log: ResultLogger) -> None:
    space = ctx.space
    gate = ellipticity_check(ctx.field, space, ctx.cutoff, params.mu)
    log.check(
        "ellipticity_gate", gate.passed, gate.min_eigenvalue_found, params.mu,
        asserted=params.assert_checks,
    )
    if not gate.passed:
        return
    decomposition = ctx.decomposition()
    report = riesz_l2_check(decomposition, ctx.field, ctx.cutoff, params.mu)
    for axis, norm in enumerate(report.norms):
        log.log("riesz_l2_norm", norm, report.bound, axis=axis)
    log.constant("margin", report.margin)
    log.check("riesz_l2_bound", report.passed, max(report.norms, default=0.0), report.bound)

    for axis in params.axes if params.axes is not None else range(space.dim):
        T = riesz_matrix(space, decomposition, ctx.cutoff, axis)
        kernel = kernel_of(T)
        estimate = weak_operator_lower(kernel)
        log.log("weak11_lower", estimate.value, axis=axis)
        log.log("column_l1", column_l1_norm(kernel), axis=axis)
        replay = estimate.reproduce(T)
        error = abs(replay - estimate.value) / max(estimate.value, 1e-300)
        log.check("weak_witness_reproduces", error <= 1e-8, replay, estimate.value, axis=axis)


def run_cz(ctx: RunContext, params, log: ResultLogger) -> None:
    space = ctx.space
    mu = space.node_measure
    rng = np.random.default_rng(ctx.seed)
    failures: dict[str, int] = {}
    worst_overlap, worst_mass = 0, 0.0
    for trial in range(params.trials):
        f = rng.exponential(size=space.n_nodes) * (rng.random(space.n_nodes) < 0.3)
        if params.spikes:
            f[rng.integers(0, space.n_nodes, size=params.spikes)] += rng.uniform(10, 100, size=params.spikes)
        f_mean = float(np.sum(np.abs(f) * mu)) / space.total_measure
        alpha = max(f_mean, 1e-12) * rng.uniform(1.5, 20.0)
        decomposition = cz_decompose(space, f, alpha)
        for name, ok in decomposition.check_invariants(f).items():
            failures[name] = failures.get(name, 0) + (not ok)
        worst_overlap = max(worst_overlap, decomposition.overlap)
        worst_mass = max(worst_mass, decomposition.c_mass)

        g = rng.standard_normal(space.n_nodes)
        combined = weak_l1_norm(f + g, mu)
        bound = 2 * (weak_l1_norm(f, mu) + weak_l1_norm(g, mu))
        failures["weak_quasi_triangle"] = failures.get("weak_quasi_triangle", 0) + (
            combined > bound * (1 + 1e-12)
        )

    for name in sorted(failures):
        passed = params.trials - failures[name]
        log.check(
            f"invariant_{name}", failures[name] == 0, passed, params.trials,
            asserted=params.assert_checks,
        )
    log.constant("max_overlap", worst_overlap, 2**space.dim * (math.ceil(math.sqrt(space.dim)) + 1) ** space.dim)
    log.constant("max_c_mass", worst_mass)


def _refinements(ctx: RunContext, requested) -> tuple[list[int], list[int]]:
    """Node counts per axis to refine over, split into kept and over MAX_NODES."""
    N = ctx.space.nodes_per_axis[0]
    candidates = requested or [N, 2 * N, 4 * N]
    kept = [n for n in candidates if n**ctx.space.dim <= settings.MAX_NODES]
    return kept, [n for n in candidates if n not in kept]


def run_weak11(ctx: RunContext, params, log: ResultLogger) -> None:
    hs, strong, weak = [], [], []
    kept, dropped = _refinements(ctx, params.refinements)
    for N in dropped:
        log.flag("refinement_above_max_nodes", N**ctx.space.dim, settings.MAX_NODES, N=N)
    for N in kept:
        sub = ctx.refined(N)
        decomposition = sub.decomposition()
        if params.operator == "riesz":
            instance = _riesz_instance(sub, decomposition, params.axis)
        else:
            block = params.multiplier or PresetBlock(preset="imaginary_power", params={"s_im": 1.0})
            instance = _multiplier_instance(sub, decomposition, block)
        kernel = kernel_of(instance.T)
        hs.append(max(sub.space.spacing))
        strong.append(column_l1_norm(kernel))
        weak.append(weak_operator_lower(kernel).value)
        log.log("column_l1", strong[-1], N=N, h=hs[-1])
        log.log("weak11_lower", weak[-1], N=N, h=hs[-1])

    if len(hs) >= 2:
        slope = float(np.polyfit(np.log(1 / np.asarray(hs)), np.asarray(strong), 1)[0])
        log.constant("column_l1_log_slope", slope)
        if params.operator == "riesz":
            log.check("column_l1_grows", slope > 0, slope, 0.0, asserted=params.assert_checks)
        for k in range(1, len(weak)):
            change = abs(weak[k] / weak[k - 1] - 1) if weak[k - 1] > 0 else math.inf
            log.check(
                "weak11_refinement_change", change <= params.max_change, change,
                params.max_change, asserted=params.assert_checks, h=hs[k],
            )
    else:
        log.flag("too_few_refinements", len(hs))


def _growth_exponent(parameters: Sequence[float], norms: Sequence[float]) -> float:
    return float(np.polyfit(np.log1p(np.abs(parameters)), np.log(norms), 1)[0])


def run_imaginary_powers(ctx: RunContext, params, log: ResultLogger) -> None:
    decomposition = ctx.decomposition()
    M = ctx.cutoff.operator(ctx.space)
    norms = []
    for s in params.s_values:
        F = make_multiplier("imaginary_power", {"s_im": s})
        T = compose(M, apply_function(decomposition, F), M)
        estimate = lp_norm_estimate(T, params.p, params.restarts, ctx.seed)
        norms.append(estimate.value)
        log.log("lp_lower", estimate.value, s=s, p=params.p)
        replay = estimate.reproduce(T)
        log.check("witness_reproduces", abs(replay - estimate.value) <= 1e-8 * estimate.value, replay, estimate.value, s=s)

    bound = (ctx.space.dim + 0.5) * abs(0.5 - 1 / params.p) + params.slack
    if len(norms) >= 2 and min(norms) > 0:
        exponent = _growth_exponent(params.s_values, norms)
        log.constant("growth_exponent", exponent, bound)
        log.check("growth_below_envelope", exponent <= bound, exponent, bound, asserted=params.assert_checks)


def run_propagation(ctx: RunContext, params, log: ResultLogger) -> None:
    decomposition = ctx.decomposition()
    M = ctx.cutoff.operator(ctx.space)
    norms = []
    for t in params.t_values:
        F = make_multiplier(params.preset, {"alpha": params.alpha, "t": t})
        T = compose(M, apply_function(decomposition, F), M)
        estimate = lp_norm_estimate(T, params.p, params.restarts, ctx.seed)
        norms.append(estimate.value)
        log.log("lp_lower", estimate.value, t=t, p=params.p, alpha=params.alpha)
    if len(norms) >= 2 and min(norms) > 0:
        log.constant("growth_exponent", _growth_exponent(params.t_values, norms))


def run_theorem1(ctx: RunContext, params, log: ResultLogger) -> None:
    window = ctx.space.length_window
    t_grid = params.t_grid.resolve(window)
    _flag_outside(log, t_grid, window, "t_grid")
    decomposition = ctx.decomposition()

    def measure(spec, role: str, k: int) -> tuple[float, float]:
        if spec.operator == "riesz":
            instance = _riesz_instance(ctx, decomposition)
        else:
            instance = _multiplier_instance(ctx, decomposition, spec.multiplier)
        dm = dm_condition(instance.T, instance.S, instance.family, params.delta, t_grid)
        weak = weak_operator_lower(kernel_of(instance.T)).value
        T_norm = lp_norm_estimate(instance.T, params.p0, seed=ctx.seed).value
        S_norm = lp_norm_estimate(instance.S, params.q0, seed=ctx.seed).value
        rhs = theorem1_rhs(
            dm.W, params.delta, T_norm, S_norm, params.p0, params.q0, dim=ctx.space.dim
        )
        log.log("weak11_lower", weak, rhs, role=role, index=k, instance=instance.label)
        return weak, rhs

    fit = [measure(spec, "fit", k) for k, spec in enumerate(params.fit_instances)]
    held = [measure(spec, "held_out", k) for k, spec in enumerate(params.held_out)]
    report = theorem1_coherence(fit, held, params.slack)
    log.constant("C_fit", report.C_fit)
    for k, ratio in enumerate(report.ratios):
        log.log("held_out_ratio", ratio, params.slack, index=k)
    log.check(
        "held_out_within_slack", report.passed, max(report.ratios, default=0.0), params.slack,
        asserted=params.assert_checks,
    )


def run_fourier_check(ctx: RunContext, params, log: ResultLogger) -> None:
    F = make_multiplier(params.multiplier.preset, params.multiplier.params)
    decomposition = ctx.decomposition()
    # raises VerificationError when the truncated integral misses the tolerance
    operator = fourier_calculus_crosscheck(
        decomposition, F, params.r, params.xi_max, params.panels, tolerance=params.tolerance
    )
    relative = operator.meta["relative_deviation"]
    log.constant("relative_deviation", relative, params.tolerance)
    log.check("fourier_matches_spectral", True, relative, params.tolerance)


def run_exploratory_no_factor(ctx: RunContext, params, log: ResultLogger) -> None:
    space = ctx.space
    block = params.region or ctx.blocks.get("region")
    if block is not None:
        region = make_region(space, block.lower, block.upper)
    else:
        region = make_region(
            space, [L / 4 for L in space.extent], [3 * L / 4 for L in space.extent]
        )
    t_grid = params.t_grid.resolve(space.time_window)
    _flag_outside(log, t_grid, space.time_window, "t_grid")
    mask = localize(space, region)
    kernels = _LazyKernels(space, ctx.free_decomposition(), mask, mask, t_grid)
    fit = gaussian_fit(kernels, t_grid, False)
    _log_gaussian(log, fit, "_no_factor")
    log.log("region_diameter", region.diameter)


ExperimentRunner = Callable[[RunContext, object, ResultLogger], None]

EXPERIMENTS: dict[ExperimentKind, ExperimentRunner] = {
    ExperimentKind.DOUBLING: run_doubling,
    ExperimentKind.ASSEMBLY: run_assembly,
    ExperimentKind.SUBORDINATION: run_subordination,
    ExperimentKind.GAUSSIAN: run_gaussian,
    ExperimentKind.SUPBOUNDS: run_supbounds,
    ExperimentKind.COMPLEX_TIME: run_complex_time,
    ExperimentKind.DAVIES_GAFFNEY: run_davies_gaffney,
    ExperimentKind.OFFDIAG: run_offdiag,
    ExperimentKind.DM: run_dm,
    ExperimentKind.MULTIPLIER_OSC: run_multiplier_osc,
    ExperimentKind.MIHLIN: run_mihlin,
    ExperimentKind.KERNEL_MOMENT: run_kernel_moment,
    ExperimentKind.SEMIGROUP_MOMENT: run_semigroup_moment,
    ExperimentKind.RIESZ: run_riesz,
    ExperimentKind.CZ: run_cz,
    ExperimentKind.WEAK11: run_weak11,
    ExperimentKind.IMAGINARY_POWERS: run_imaginary_powers,
    ExperimentKind.PROPAGATION: run_propagation,
    ExperimentKind.THEOREM1: run_theorem1,
    ExperimentKind.FOURIER_CHECK: run_fourier_check,
    ExperimentKind.EXPLORATORY_NO_FACTOR: run_exploratory_no_factor,
}


def run_experiment(ctx: RunContext, kind: ExperimentKind, params, log: ResultLogger) -> None:
    logger.info(f"Starting experiment {log.experiment}")
    EXPERIMENTS[kind](ctx, params, log)

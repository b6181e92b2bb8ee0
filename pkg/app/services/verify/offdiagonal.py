"""Off-diagonal L^1 -> L^q profiles and the oscillation condition for
singular integral operators."""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from app.core.config import settings
from app.core.logging import logger
from app.models.exceptions import VerificationError
from app.models.operators import DiscreteOperator, SpectralDecomposition
from app.models.space import GridSpace, annulus, ball, distance_matrix, linear_annulus, volume
from app.services.spectral import propagator
from app.services.verify.kernels import localize


class ProbeFamily:
    INDICATOR = "indicator"
    DELTA = "delta"
    RANDOM = "random"

    ALL = (INDICATOR, DELTA, RANDOM)


def probe_functions(
    space: GridSpace, x: int, t: float, rng: np.random.Generator, family=ProbeFamily.ALL
) -> list[tuple[str, np.ndarray]]:
    """Nonnegative inputs supported in B(x, t)."""
    support = ball(space, x, t)
    functions = []
    for kind in family:
        f = np.zeros(space.n_nodes)
        if kind == ProbeFamily.INDICATOR:
            f[support] = 1.0
        elif kind == ProbeFamily.DELTA:
            f[x] = 1.0 / space.node_measure[x]
        elif kind == ProbeFamily.RANDOM:
            f[support] = rng.uniform(0.0, 1.0, size=support.size)
        else:
            raise VerificationError(f"Unknown test function kind: {kind}")
        functions.append((kind, f))
    return functions


@dataclass
class OffDiagonalProfile:
    g: dict[int, float]
    weights: dict[int, float]
    partial_sums: list[float]
    weighted_sum: float
    saturation: float
    q0: float
    tail_slope: float | None
    skipped: list[str] = field(default_factory=list)
    # annuli that held grid nodes but only values under the noise floor
    below_noise_floor: list[int] = field(default_factory=list)


def off_diagonal_profile(
    decomposition: SpectralDecomposition,
    localizer,
    t_grid: Sequence[float],
    x_samples: Sequence[int],
    q0: float = 2.0,
    j_max: int = 8,
    annuli: str = "dyadic",
    seed: int = 0,
    family: Sequence[str] = ProbeFamily.ALL,
    operator_family: Callable[[float], np.ndarray] | None = None,
    noise_floor: float = settings.NOISE_FLOOR,
) -> OffDiagonalProfile:
    """g(j) = max over (x, t, f) of the averaged L^q0 norm of A_t f on the j-th
    annulus, relative to the average of |f| on B(x, t).

    A_t = e^{-t^2 H} M_chi unless ``operator_family`` gives another dense
    matrix for each t. ``annuli="linear"`` uses B(x,(j+1)t) minus B(x,jt)
    with weights j^d; the default uses C_j(x,t) with weights 2^{jd}. Values
    of |A_t f| under ``noise_floor`` times its peak count as zero; annuli left
    at g(j) = 0 that way are listed in ``below_noise_floor``.
    """
    space = decomposition.space
    if annuli not in ("dyadic", "linear"):
        raise VerificationError(f"annuli must be dyadic or linear, got {annuli}")
    chi = localize(space, localizer)
    rng = np.random.default_rng(seed)
    mu = space.node_measure

    g = {j: 0.0 for j in range(1, j_max + 1)}
    skipped = []
    reached = set()
    for t in t_grid:
        if operator_family is not None:
            A_t = operator_family(t)
        else:
            A_t = propagator(decomposition, t * t).dense() * chi[None, :]
        for x in x_samples:
            for kind, f in probe_functions(space, x, t, rng, family):
                base = np.sum(np.abs(f) * mu) / volume(space, ball(space, x, t))
                image = np.abs(A_t @ f)
                peak = image.max()
                if peak > 0:
                    image[image < noise_floor * peak] = 0.0
                for j in g:
                    if annuli == "dyadic":
                        ring = annulus(space, x, j, t)
                        outer = 2 ** (j + 1) * t
                    else:
                        ring = linear_annulus(space, x, j, t)
                        outer = (j + 1) * t
                    if ring.size == 0:
                        skipped.append(f"j={j} x={x} t={t:.4g}")
                        continue
                    reached.add(j)
                    mass = np.sum(image[ring] ** q0 * mu[ring]) / volume(
                        space, ball(space, x, outer)
                    )
                    g[j] = max(g[j], float(mass ** (1 / q0) / base))

    if skipped:
        logger.warning(f"Off-diagonal profile skipped {len(skipped)} empty annuli")
    below_noise_floor = [j for j in sorted(g) if j in reached and g[j] == 0.0]
    if below_noise_floor:
        logger.info(f"Off-diagonal profile: g(j) under the noise floor for j in {below_noise_floor}")
    if annuli == "dyadic":
        weights = {j: 2.0 ** (j * space.dim) for j in g}
    else:
        weights = {j: float(j) ** space.dim for j in g}
    partial = np.cumsum([weights[j] * g[j] for j in sorted(g)])
    total = float(partial[-1]) if partial.size else 0.0
    increment = float(partial[-1] - partial[-2]) if partial.size > 1 else total

    tail = [(j, g[j]) for j in sorted(g) if j >= 2 and g[j] > 0]
    tail_slope = None
    if len(tail) >= 2:
        growth = [4.0**j if annuli == "dyadic" else float(j * j) for j, _ in tail]
        tail_slope = float(np.polyfit(growth, [math.log(v) for _, v in tail], 1)[0])

    return OffDiagonalProfile(
        g=g,
        weights=weights,
        partial_sums=partial.tolist(),
        weighted_sum=total,
        saturation=increment / total if total > 0 else 0.0,
        q0=q0,
        tail_slope=tail_slope,
        skipped=skipped,
        below_noise_floor=below_noise_floor,
    )


@dataclass
class DMReport:
    delta: float
    t_grid: list[float]
    kernel_values: list[float]
    operator_values: list[float]
    W: float
    W_operator: float
    stability: float


def grid_stability(values: Sequence[float]) -> float:
    """sup over the whole grid divided by sup over its first half."""
    values = list(values)
    if not values:
        return 1.0
    head = max(values[: max(1, len(values) // 2)])
    whole = max(values)
    if head == 0:
        return 1.0 if whole == 0 else math.inf
    return whole / head


def dm_condition(
    T: DiscreteOperator,
    S: DiscreteOperator,
    operator_family: Callable[[float], DiscreteOperator],
    delta: float,
    t_grid: Sequence[float],
    indicator_centers: Sequence[int] | None = None,
) -> DMReport:
    """Kernel and operator forms of the oscillation condition for T - S A_t.

    Kernel form: sup over y, t of sum over rho(x,y) >= delta t of
    |K(x,y) - K_t(x,y)| mu_x. Operator form: sup over delta inputs and ball
    indicators u around y of the L^1 mass of (T - S A_t) u outside
    B(y, (1 + delta) t), per unit ||u||_1.
    """
    if delta <= 0:
        raise VerificationError(f"delta must be positive, got {delta}")
    space = T.space
    mu_in = space.measure(T.domain)
    mu_out = space.measure(T.codomain)
    rho = distance_matrix(space, T.codomain, T.domain)
    if indicator_centers is None:
        stride = max(1, space.n_nodes // 64)
        indicator_centers = range(0, space.n_nodes, stride)
    T_dense, S_dense = T.dense(), S.dense()

    kernel_values, operator_values = [], []
    for t in t_grid:
        difference = T_dense - S_dense @ operator_family(t).dense()
        kernel = np.abs(difference) / mu_in[None, :]
        far = rho >= delta * t
        kernel_values.append(float(np.max(np.sum(kernel * far * mu_out[:, None], axis=0))))

        # delta inputs: column y of the kernel outside B(y, (1+delta) t)
        outside = rho >= (1 + delta) * t
        best = float(np.max(np.sum(kernel * outside * mu_out[:, None], axis=0)))
        for y in indicator_centers:
            support = ball(space, y, t)
            u = np.zeros(space.n_nodes)
            u[support] = 1.0
            image = np.abs(difference @ u)
            mass = np.sum(image[outside[:, y]] * mu_out[outside[:, y]])
            best = max(best, float(mass / np.sum(u * mu_in)))
        operator_values.append(best)

    report = DMReport(
        delta=delta,
        t_grid=[float(t) for t in t_grid],
        kernel_values=kernel_values,
        operator_values=operator_values,
        W=max(kernel_values, default=0.0),
        W_operator=max(operator_values, default=0.0),
        stability=grid_stability(kernel_values),
    )
    logger.info(f"DM condition delta={delta}: W={report.W:.4g}, operator form {report.W_operator:.4g}")
    return report

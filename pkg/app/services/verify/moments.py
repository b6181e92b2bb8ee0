"""Weighted kernel moments, dyadic oscillation sums and weighted semigroup
moments."""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from app.core.logging import logger
from app.models.exceptions import VerificationError
from app.models.media import Cutoff
from app.models.operators import SpectralDecomposition
from app.models.space import Stagger, ball, distance_matrix, volume
from app.services.assemble import discrete_gradient
from app.services.multiplier import (
    MIHLIN_SAMPLES,
    DyadicPartition,
    holder_norm,
    mihlin_sup,
    scale,
)
from app.services.spectral import apply_function, propagator
from app.services.verify.kernels import localize
from app.services.verify.offdiagonal import grid_stability

EXPONENT_GUARD = 700.0


@dataclass
class KernelMomentReport:
    r: float
    s: float
    lhs: float
    rhs: float
    ratio: float
    per_y: dict[int, float] = field(default_factory=dict)


def weighted_kernel_moment(
    decomposition: SpectralDecomposition,
    F,
    cutoff: Cutoff | None,
    r: float,
    s: float,
    y_samples: Sequence[int] | None = None,
    eps_s: float = 0.01,
) -> KernelMomentReport:
    """max_y sum_x |K(x,y)|^2 (1 + sqrt(r)|x-y|)^s mu_x for K the kernel of
    M F(H) M, against r^{d/2} ||delta_r F||^2 in C^{s/2 + eps_s}([0, 1]).

    Raises:
        VerificationError: F is visibly nonzero on eigenvalues above r.
    """
    space = decomposition.space
    if r <= 0 or s < 0:
        raise VerificationError(f"need r > 0 and s >= 0, got r={r}, s={s}")
    spectrum = decomposition.eigenvalues
    on_spectrum = np.abs(np.asarray(F(spectrum)))
    peak = on_spectrum.max() if on_spectrum.size else 0.0
    beyond = on_spectrum[spectrum > r * (1 + 1e-12)]
    if beyond.size and beyond.max() > 1e-12 * max(peak, 1e-300):
        raise VerificationError(f"F is not supported in [0, {r}] on the spectrum")

    chi = localize(space, cutoff)
    operator = apply_function(decomposition, F).dense()
    kernel = chi[:, None] * operator * chi[None, :] / space.node_measure[None, :]
    rho = distance_matrix(space)
    weight = (1.0 + math.sqrt(r) * rho) ** s
    moments = np.sum(np.abs(kernel) ** 2 * weight * space.node_measure[:, None], axis=0)
    if y_samples is None:
        y_samples = range(space.n_nodes)
    per_y = {int(y): float(moments[y]) for y in y_samples}
    lhs = max(per_y.values(), default=0.0)

    unit = np.linspace(0.0, 1.0, MIHLIN_SAMPLES)
    norm = holder_norm(np.asarray(scale(F, r)(unit)), 0.0, 1.0, s / 2 + eps_s)
    rhs = r ** (space.dim / 2) * norm**2
    return KernelMomentReport(
        r=r, s=s, lhs=lhs, rhs=rhs, ratio=lhs / rhs if rhs > 0 else 0.0, per_y=per_y
    )


@dataclass
class OscillationTable:
    n_values: list[int]
    t_grid: list[float]
    values: np.ndarray
    row_sums: list[float]
    row_sums_reversed: list[float]
    reference: np.ndarray
    constant: float
    mihlin: float
    stability: float

    @property
    def summation_gap(self) -> float:
        return max(
            (abs(a - b) for a, b in zip(self.row_sums, self.row_sums_reversed)), default=0.0
        )


def dyadic_range(decomposition: SpectralDecomposition) -> tuple[int, int]:
    """n with phi(2^-n .) covering the spectrum."""
    low = max(decomposition.lambda_min, 1e-300)
    return math.floor(math.log2(low)), math.ceil(math.log2(decomposition.lambda_max)) + 2


def dyadic_oscillation(
    F: Callable,
    partition: DyadicPartition,
    s: float,
    decomposition: SpectralDecomposition,
    cutoff: Cutoff | None,
    t_grid: Sequence[float],
    n_range: tuple[int, int] | None = None,
) -> OscillationTable:
    """I_{n,t} = max_y sum_{|x-y| >= t} |K_{n,t}(x,y)| mu_x for the kernel of
    M G_{n,t}(H) M with G_{n,t}(lambda) = phi(2^-n lambda) F(lambda)(1 - e^{-t^2 lambda}).

    The reference shape is min(1, t^2 2^n) min(1, (t 2^{n/2})^{d/2 - s}); the
    fitted constant is the smallest C with I <= C * reference * mihlin_sup(F).
    """
    space = decomposition.space
    n_min, n_max = n_range or dyadic_range(decomposition)
    n_values = list(range(n_min, n_max + 1))
    chi = localize(space, cutoff)
    mu = space.node_measure
    rho = distance_matrix(space)
    lam = decomposition.eigenvalues
    base = np.asarray(F(lam))

    values = np.zeros((len(t_grid), len(n_values)))
    for i, t in enumerate(t_grid):
        damping = 1.0 - np.exp(-t * t * lam)
        far = rho >= t
        for k, n in enumerate(n_values):
            multiplier = partition.phi(2.0**-n * lam) * base * damping
            if not np.any(multiplier):
                continue
            matrix = decomposition.synthesize(multiplier)
            kernel = np.abs(chi[:, None] * matrix * chi[None, :]) / mu[None, :]
            values[i, k] = float(np.max(np.sum(kernel * far * mu[:, None], axis=0)))

    row_sums = [float(math.fsum(row)) for row in values]
    row_sums_reversed = [float(sum(row[::-1])) for row in values]

    dim = space.dim
    reference = np.array(
        [
            [
                min(1.0, t * t * 2.0**n) * min(1.0, (t * 2.0 ** (n / 2)) ** (dim / 2 - s))
                for n in n_values
            ]
            for t in t_grid
        ]
    )
    mihlin = mihlin_sup(F, partition, s, [2.0**n for n in n_values]).value
    scaled = reference * mihlin
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(scaled > 0, values / scaled, 0.0)
    constant = float(ratios.max()) if ratios.size else 0.0

    table = OscillationTable(
        n_values=n_values,
        t_grid=[float(t) for t in t_grid],
        values=values,
        row_sums=row_sums,
        row_sums_reversed=row_sums_reversed,
        reference=reference,
        constant=constant,
        mihlin=mihlin,
        stability=grid_stability(row_sums),
    )
    logger.info(
        f"Dyadic oscillation n in [{n_min}, {n_max}]: sup row sum {max(row_sums, default=0):.4g}"
    )
    return table


@dataclass
class SemigroupMoment:
    lhs: float
    reference: float
    ratio: float
    s: float
    t: float
    beta: float
    gradient: bool
    probe: str


def weighted_semigroup_moment(
    decomposition: SpectralDecomposition,
    chi: Cutoff | None,
    chi_tilde: Cutoff | None,
    x: int,
    t: float,
    s: float,
    beta: float,
    gradient_flag: bool = False,
    probe: str = "delta",
) -> SemigroupMoment:
    """sum_y |v(y)|^2 e^{beta |x-y|^2 / s} mu_y against its envelope.

    v = M_chi~ e^{-sH} M_chi u without the gradient flag and
    M_chi G e^{-sH} M_chi u (cell valued, all axes) with it. u is the
    L^1-normalized delta at x or indicator of B(x, t). The envelopes are
    s^{-d/2} e^{2 beta t^2/s} e^{-s} and s^{-d/2-1} e^{6 beta t^2/s}.

    Raises:
        VerificationError: Weight exponent beyond the overflow guard.
    """
    space = decomposition.space
    if s <= 0 or beta < 0:
        raise VerificationError(f"need s > 0 and beta >= 0, got s={s}, beta={beta}")
    u = np.zeros(space.n_nodes)
    if probe == "delta":
        u[x] = 1.0 / space.node_measure[x]
    elif probe == "indicator":
        support = ball(space, x, t)
        u[support] = 1.0 / volume(space, support)
    else:
        raise VerificationError(f"Unknown probe: {probe}")

    inner = localize(space, chi) * u
    evolved = propagator(decomposition, s).apply(inner)
    center = space.node_coords[x][None, :]
    if gradient_flag:
        stagger = Stagger.CELLS
        grads = discrete_gradient(space)
        outer = chi.cell_samples(space) if chi is not None else np.ones(space.n_cells)
        field_sq = sum((outer * (grads[k] @ evolved)) ** 2 for k in range(space.dim))
    else:
        stagger = Stagger.NODES
        field_sq = np.abs(localize(space, chi_tilde) * evolved) ** 2
    rho2 = space.distances(center, space.coords(stagger))[0] ** 2

    exponent = beta * rho2 / s
    if exponent.size and exponent.max() > EXPONENT_GUARD:
        raise VerificationError(
            f"beta={beta} is out of range at s={s}: weight exponent {exponent.max():.1f}"
        )
    lhs = float(np.sum(field_sq * np.exp(exponent) * space.measure(stagger)))

    half_dim = space.dim / 2
    if gradient_flag:
        reference = s ** (-half_dim - 1) * math.exp(6 * beta * t * t / s)
    else:
        reference = s**-half_dim * math.exp(2 * beta * t * t / s) * math.exp(-s)
    return SemigroupMoment(
        lhs=lhs,
        reference=reference,
        ratio=lhs / reference,
        s=s,
        t=t,
        beta=beta,
        gradient=gradient_flag,
        probe=probe,
    )


@dataclass
class SemigroupMomentFit:
    constant: float
    spread: float
    samples: list[SemigroupMoment]


def fit_semigroup_moments(samples: Sequence[SemigroupMoment]) -> SemigroupMomentFit:
    """C = max ratio over the grid; spread = max / min over positive ratios."""
    ratios = [m.ratio for m in samples if m.ratio > 0]
    if not ratios:
        return SemigroupMomentFit(constant=0.0, spread=1.0, samples=list(samples))
    return SemigroupMomentFit(
        constant=max(ratios), spread=max(ratios) / min(ratios), samples=list(samples)
    )

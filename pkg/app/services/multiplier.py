"""Spectral multipliers, the dyadic partition of unity and C^s norms."""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from app.core.logging import logger
from app.models.exceptions import MultiplierError
from app.utils.presets import PresetFamily, get_preset_manager
from app.utils.smooth import bump, falling

# Multiplier C^s norms are evaluated on [1/8, 2], a little wider than supp phi
MIHLIN_WINDOW = (0.125, 2.0)
MIHLIN_SAMPLES = 8 * 256 + 1


@dataclass(eq=False)
class MultiplierFunction:
    preset_id: str
    params: dict[str, Any]
    fn: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, float] | None = None

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.fn(lam)

    def describe(self) -> dict:
        return {"preset": self.preset_id, **self.params}


def _nonneg(lam: np.ndarray) -> np.ndarray:
    return np.maximum(lam, 0.0)


def _imaginary_power(s_im: float) -> Callable:
    def fn(lam):
        lam = _nonneg(lam)
        out = np.ones(lam.shape, dtype=complex)
        positive = lam > 0
        out[positive] = np.exp(1j * s_im * np.log(lam[positive]))
        return out

    return fn


def _bochner_riesz(alpha: float, R: float) -> Callable:
    def fn(lam):
        base = 1.0 - _nonneg(lam) / R
        out = np.zeros(base.shape)
        inside = base > 0
        out[inside] = base[inside] ** alpha
        return out

    return fn


def _smooth_bump(lo: float, hi: float) -> Callable:
    peak = float(bump(np.array([0.5]))[0])
    return lambda lam: bump((lam - lo) / (hi - lo)) / peak


def make_multiplier(preset_id: str, params: dict[str, Any] | None = None) -> MultiplierFunction:
    """Build a multiplier from the preset catalog.

    Raises:
        MultiplierError: Unknown preset or parameter, or parameters outside
            the preset's range.
    """
    params = get_preset_manager().resolve(
        PresetFamily.MULTIPLIERS, preset_id, params, error=MultiplierError
    )
    support = None

    if preset_id == "constant":
        value = float(params["value"])
        fn = lambda lam: np.full(np.shape(lam), value)  # noqa: E731
    elif preset_id == "heat":
        t = float(params["t"])
        if t < 0:
            raise MultiplierError(f"heat needs t >= 0, got {t}")
        fn = lambda lam: np.exp(-t * _nonneg(lam))  # noqa: E731
    elif preset_id == "imaginary_power":
        fn = _imaginary_power(float(params["s_im"]))
    elif preset_id in ("schrodinger", "wave"):
        alpha, t = float(params["alpha"]), float(params["t"])
        if alpha < 0:
            raise MultiplierError(f"{preset_id} needs alpha >= 0, got {alpha}")
        if preset_id == "schrodinger":
            fn = lambda lam: (1 + _nonneg(lam)) ** -alpha * np.exp(  # noqa: E731
                1j * t * _nonneg(lam)
            )
        else:
            fn = lambda lam: (1 + _nonneg(lam)) ** (-alpha / 2) * np.exp(  # noqa: E731
                1j * t * np.sqrt(_nonneg(lam))
            )
    elif preset_id == "bochner_riesz":
        alpha, R = float(params["alpha"]), float(params["R"])
        if alpha < 0 or R <= 0:
            raise MultiplierError(f"bochner_riesz needs alpha >= 0 and R > 0, got {alpha}, {R}")
        fn, support = _bochner_riesz(alpha, R), (0.0, R)
    elif preset_id == "smooth_bump":
        lo, hi = float(params["lo"]), float(params["hi"])
        if lo < 0 or hi <= lo:
            raise MultiplierError(f"smooth_bump needs 0 <= lo < hi, got {lo}, {hi}")
        fn, support = _smooth_bump(lo, hi), (lo, hi)
    elif preset_id == "dyadic_bump":
        size = float(params["scale"])
        if size <= 0:
            raise MultiplierError(f"dyadic_bump needs scale > 0, got {size}")
        partition = dyadic_partition()
        fn, support = (lambda lam: partition.phi(lam / size)), (size / 4, size)
    else:
        raise MultiplierError(f"Preset {preset_id} has no multiplier builder")

    return MultiplierFunction(preset_id=preset_id, params=params, fn=fn, support=support)


def scale(F: MultiplierFunction, r: float) -> MultiplierFunction:
    """delta_r F: lambda -> F(r lambda)."""
    if r <= 0:
        raise MultiplierError(f"scale factor must be positive, got {r}")
    support = None if F.support is None else (F.support[0] / r, F.support[1] / r)
    return MultiplierFunction(
        preset_id=F.preset_id,
        params={**F.params, "scaled_by": r * F.params.get("scaled_by", 1.0)},
        fn=lambda lam: F.fn(r * np.asarray(lam, dtype=float)),
        support=support,
    )


@dataclass(frozen=True)
class DyadicPartition:
    """phi(lambda) = eta(lambda) - eta(2 lambda), supported in [1/4, 1].

    eta is 1 up to 1 - 1/(2 sharpness) and 0 from 1 on.
    """

    sharpness: float = 1.0
    n_min: int = -30
    n_max: int = 30

    @property
    def transition_start(self) -> float:
        return 1.0 - 1.0 / (2.0 * self.sharpness)

    def eta(self, lam):
        return falling(lam, self.transition_start, 1.0)

    def phi(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.eta(lam) - self.eta(2.0 * lam)

    def partition_sum(self, lam, n_range: tuple[int, int] | None = None):
        n_min, n_max = n_range or (self.n_min, self.n_max)
        lam = np.asarray(lam, dtype=float)
        return sum(self.phi(2.0**-n * lam) for n in range(n_min, n_max + 1))

    def piece(self, F: Callable, n: int) -> Callable:
        """F_n = phi(2^-n .) F."""
        return lambda lam: self.phi(2.0**-n * np.asarray(lam, dtype=float)) * F(lam)


def dyadic_partition(
    step_sharpness: float = 1.0, n_range: tuple[int, int] = (-30, 30)
) -> DyadicPartition:
    if step_sharpness < 1:
        raise MultiplierError(
            f"step_sharpness below 1 moves supp phi outside [1/4, 1]: {step_sharpness}"
        )
    return DyadicPartition(sharpness=step_sharpness, n_min=n_range[0], n_max=n_range[1])


@dataclass(frozen=True)
class HolderOrder:
    s: float

    def __post_init__(self):
        if self.s <= 0 or float(self.s).is_integer():
            raise MultiplierError(f"Holder order must be positive and non-integer, got {self.s}")

    @property
    def integer_part(self) -> int:
        return int(math.floor(self.s))

    @property
    def fraction(self) -> float:
        return self.s - self.integer_part


def default_order(dim: int) -> float:
    return dim / 2 + 0.51


def holder_norm(samples: np.ndarray, lo: float, hi: float, s: float) -> float:
    """C^s norm of a function sampled uniformly on [lo, hi].

    Sum of sup |F^(k)| for k <= [s] plus the Holder seminorm of F^([s]) with
    exponent s - [s], taken over sample pairs at least two steps apart.
    Derivatives are second order finite differences.

    Raises:
        MultiplierError: Integer s, or too few samples for [s] derivatives.
    """
    order = HolderOrder(s)
    values = np.asarray(samples)
    m = values.size
    if m < 4 * (order.integer_part + 1) + 1:
        raise MultiplierError(f"{m} samples are too coarse for C^{s}")
    step = (hi - lo) / (m - 1)

    total = float(np.max(np.abs(values)))
    derivative = values
    for _ in range(order.integer_part):
        derivative = np.gradient(derivative, step, edge_order=2)
        total += float(np.max(np.abs(derivative)))

    seminorm = 0.0
    for lag in range(2, m):
        jump = np.max(np.abs(derivative[lag:] - derivative[:-lag]))
        seminorm = max(seminorm, float(jump) / (lag * step) ** order.fraction)
    return total + seminorm


@dataclass
class MihlinReport:
    value: float
    s: float
    table: list[tuple[float, float]] = field(default_factory=list)
    edge_growth: bool = False


def mihlin_sup(
    F: Callable,
    partition: DyadicPartition,
    s: float,
    t_grid: Sequence[float],
    samples: int = MIHLIN_SAMPLES,
) -> MihlinReport:
    """max over t of ||phi(.) F(t .)||_{C^s} on [1/8, 2], with the per-t table.

    ``edge_growth`` is set when the maximum sits on the first or last t and
    beats the interior maximum by more than 5%.
    """
    if len(t_grid) == 0:
        raise MultiplierError("mihlin_sup needs a non-empty t grid")
    lo, hi = MIHLIN_WINDOW
    lam = np.linspace(lo, hi, samples)
    phi = partition.phi(lam)

    table = []
    for t in t_grid:
        table.append((float(t), holder_norm(phi * F(t * lam), lo, hi, s)))

    norms = np.array([value for _, value in table])
    edge_growth = False
    if norms.size > 2:
        interior = float(np.max(norms[1:-1]))
        edge = max(norms[0], norms[-1])
        edge_growth = bool(edge > 1.05 * interior)
    if edge_growth:
        logger.warning(f"C^{s} norms grow at the edge of the t grid: {edge:.4g}")
    return MihlinReport(value=float(norms.max()), s=s, table=table, edge_growth=edge_growth)


def log_derivative_condition(
    F: Callable,
    k_max: int,
    lam_range: tuple[float, float] = (1e-3, 1e3),
    samples: int = 4097,
) -> list[float]:
    """sup |(lambda d/dlambda)^k F(lambda)| for k = 0..k_max on a log grid."""
    u = np.linspace(math.log(lam_range[0]), math.log(lam_range[1]), samples)
    values = np.asarray(F(np.exp(u)))
    sups = [float(np.max(np.abs(values)))]
    for _ in range(k_max):
        values = np.gradient(values, u, edge_order=2)
        sups.append(float(np.max(np.abs(values))))
    return sups

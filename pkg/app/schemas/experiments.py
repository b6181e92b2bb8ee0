"""Schemas for experiment configuration files.

A config is a single JSON document. The top level describes the grid, the
coefficient field, the cutoffs and the shift; ``experiments`` lists the
measurements to run, each with a ``kind`` and a kind specific ``params``
object validated by the matching model below.
"""

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from app.core.config import settings
from app.models.exceptions import ConfigError, GridError, LabError
from app.models.media import make_cutoff, make_field, make_region
from app.models.space import Boundary, GridSpace, build_grid
from app.utils.presets import PresetFamily, get_preset_manager


class ExperimentKind(str, enum.Enum):
    """Experiment suites a config can request."""

    DOUBLING = "doubling"
    ASSEMBLY = "assembly"
    SUBORDINATION = "subordination"
    GAUSSIAN = "gaussian"
    SUPBOUNDS = "supbounds"
    COMPLEX_TIME = "complex_time"
    DAVIES_GAFFNEY = "davies_gaffney"
    OFFDIAG = "offdiag"
    DM = "dm"
    MULTIPLIER_OSC = "multiplier_osc"
    MIHLIN = "mihlin"
    KERNEL_MOMENT = "kernel_moment"
    SEMIGROUP_MOMENT = "semigroup_moment"
    RIESZ = "riesz"
    CZ = "cz"
    WEAK11 = "weak11"
    IMAGINARY_POWERS = "imaginary_powers"
    PROPAGATION = "propagation"
    THEOREM1 = "theorem1"
    FOURIER_CHECK = "fourier_check"
    EXPLORATORY_NO_FACTOR = "exploratory_no_factor"
    FULL = "full"


class TimeScale(str, enum.Enum):
    """Which validity window a grid is checked against."""

    TIME = "time"
    LENGTH = "length"


class Localizer(str, enum.Enum):
    CUTOFF = "cutoff"
    REGION = "region"
    NONE = "none"


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpaceBlock(_Params):
    dim: int = 1
    extent: float | list[float] = 1.0
    N: int | list[int] = 64
    boundary: Boundary = Boundary.PERIODIC


class PresetBlock(_Params):
    preset: str
    params: dict[str, Any] = Field(default_factory=dict)


class RegionBlock(_Params):
    lower: float | list[float]
    upper: float | list[float]


class GridSpec(_Params):
    """A sampling grid: explicit ``values`` or ``points`` log-spaced values
    between ``start`` and ``stop`` (defaulting to the validity window)."""

    values: list[float] | None = None
    start: float | None = None
    stop: float | None = None
    points: int = Field(default=25, ge=1)
    allow_outside_window: bool = False

    @field_validator("values")
    @classmethod
    def _positive_values(cls, values):
        if values is not None and (not values or any(v <= 0 for v in values)):
            raise ValueError("grid values must be a non-empty list of positive numbers")
        return values

    def resolve(self, window: tuple[float, float]) -> list[float]:
        if self.values is not None:
            return sorted(float(v) for v in self.values)
        start = self.start if self.start is not None else window[0]
        stop = self.stop if self.stop is not None else window[1]
        if self.points == 1:
            return [float(start)]
        return [float(v) for v in _geomspace(start, stop, self.points)]

    def explicit(self) -> bool:
        return self.values is not None or self.start is not None or self.stop is not None


def _geomspace(start: float, stop: float, points: int) -> list[float]:
    ratio = math.log(stop / start) / (points - 1)
    return [start * math.exp(k * ratio) for k in range(points)]


def _smoothness(value: float | None) -> float | None:
    if value is not None and (value <= 0 or float(value).is_integer()):
        raise ValueError(f"s must be positive and non-integer, got {value}")
    return value


class DoublingParams(_Params):
    sample_count: int = Field(default=64, ge=1)
    lambdas: list[float] = Field(default_factory=lambda: [2.0, 4.0, 8.0])


class AssemblyParams(_Params):
    random_probes: int = Field(default=8, ge=1)
    tolerance: float = 1e-9


class SubordinationParamsBlock(_Params):
    trials: int = Field(default=20, ge=0)
    max_size: int = Field(default=256, ge=4)
    tolerance: float = 1e-6


class GaussianParams(_Params):
    t_grid: GridSpec = Field(default_factory=GridSpec)
    with_growth_factor: bool = True
    localizer: Localizer = Localizer.CUTOFF
    c_grid: list[float] | None = None
    reference_c: float = settings.REFERENCE_DECAY
    free_kernel_check: bool = False
    compare_without_factor: bool = True
    # None: check the no-factor slope against d/2 only for an indicator field
    # localized to the region
    check_half_dim_slope: bool | None = None
    slope_tolerance: float = Field(default=0.2, gt=0)
    assert_checks: bool = True


class SupBoundsParams(_Params):
    t_grid: GridSpec = Field(default_factory=GridSpec)
    localizer: Localizer = Localizer.CUTOFF


class ComplexTimeParams(_Params):
    radii: GridSpec = Field(default_factory=lambda: GridSpec(points=6))
    angles: list[float] | None = None
    decay: float = 1 / 16
    localizer: Localizer = Localizer.CUTOFF
    assert_checks: bool = True


class DaviesGaffneyParams(_Params):
    t_grid: GridSpec = Field(default_factory=lambda: GridSpec(points=6))
    source_radius_cells: int = Field(default=2, ge=1)
    distances: int = Field(default=6, ge=2)
    localizer: Localizer = Localizer.CUTOFF


class OffDiagParams(_Params):
    t_grid: GridSpec = Field(default_factory=lambda: GridSpec(points=6))
    x_samples: int = Field(default=16, ge=1)
    q0: float = Field(default=2.0, ge=1.0)
    j_max: int = Field(default=8, ge=2)
    annuli: Literal["dyadic", "linear"] = "dyadic"
    family: list[Literal["indicator", "delta", "random"]] = Field(
        default_factory=lambda: ["indicator", "delta", "random"]
    )
    assert_checks: bool = True


class DMParams(_Params):
    multiplier: PresetBlock = Field(
        default_factory=lambda: PresetBlock(preset="imaginary_power", params={"s_im": 2.0})
    )
    delta: float = Field(default=4.0, gt=0)
    t_grid: GridSpec = Field(default_factory=lambda: GridSpec(points=8))
    assert_checks: bool = True


class MultiplierOscParams(_Params):
    multiplier: PresetBlock = Field(
        default_factory=lambda: PresetBlock(preset="imaginary_power", params={"s_im": 2.0})
    )
    s: float | None = None
    step_sharpness: float = Field(default=1.0, ge=1.0)
    t_grid: GridSpec = Field(default_factory=lambda: GridSpec(points=8))
    n_range: tuple[int, int] | None = None
    assert_checks: bool = True

    @field_validator("s")
    @classmethod
    def _non_integer_s(cls, value):
        return _smoothness(value)


class MihlinParams(_Params):
    multiplier: PresetBlock = Field(
        default_factory=lambda: PresetBlock(preset="imaginary_power", params={"s_im": 2.0})
    )
    s: float | None = None
    step_sharpness: float = Field(default=1.0, ge=1.0)
    scales: list[float] = Field(default_factory=lambda: [2.0**k for k in range(-10, 11)])
    log_derivatives: int = Field(default=2, ge=0)

    @field_validator("s")
    @classmethod
    def _non_integer_s(cls, value):
        return _smoothness(value)


class KernelMomentParams(_Params):
    multiplier: PresetBlock | None = None
    radii: list[float] = Field(default_factory=lambda: [2.0**k for k in range(0, 7)])
    s: float = Field(default=1.0, ge=0)
    eps_s: float = Field(default=0.01, gt=0)
    y_samples: int = Field(default=16, ge=1)
    localizer: Localizer = Localizer.CUTOFF

    @model_validator(mode="after")
    def _holder_order(self):
        _smoothness(self.s / 2 + self.eps_s)
        return self


class SemigroupMomentParams(_Params):
    s_grid: GridSpec = Field(default_factory=lambda: GridSpec(points=6))
    betas: list[float] = Field(default_factory=lambda: [1 / 64, 1 / 32, 1 / 16, 1 / 8])
    t: float | None = None
    x_samples: int = Field(default=4, ge=1)
    probes: list[Literal["delta", "indicator"]] = Field(
        default_factory=lambda: ["delta", "indicator"]
    )


class RieszParams(_Params):
    mu: float = Field(default=1.0, gt=0)
    axes: list[int] | None = None
    assert_checks: bool = True


class CZParams(_Params):
    trials: int = Field(default=100, ge=1)
    spikes: int = Field(default=4, ge=0)
    assert_checks: bool = True


class Weak11Params(_Params):
    refinements: list[int] | None = None
    operator: Literal["riesz", "multiplier"] = "riesz"
    multiplier: PresetBlock | None = None
    axis: int = 0
    max_change: float = 0.3
    assert_checks: bool = True


class ImaginaryPowersParams(_Params):
    s_values: list[float] = Field(default_factory=lambda: [float(2**k) for k in range(7)])
    p: float = Field(default=1.5, gt=1.0)
    restarts: int = Field(default=8, ge=0)
    slack: float = 0.3
    assert_checks: bool = True


class PropagationParams(_Params):
    preset: Literal["schrodinger", "wave"] = "schrodinger"
    alpha: float = Field(default=1.0, ge=0)
    t_values: list[float] = Field(default_factory=lambda: [float(2**k) for k in range(6)])
    p: float = Field(default=1.5, gt=1.0)
    restarts: int = Field(default=4, ge=0)


class TheoremInstance(_Params):
    operator: Literal["multiplier", "riesz"] = "multiplier"
    multiplier: PresetBlock | None = None

    @model_validator(mode="after")
    def _needs_multiplier(self):
        if self.operator == "multiplier" and self.multiplier is None:
            raise ValueError("a multiplier instance needs a multiplier block")
        return self


def _default_fit_instances() -> list[TheoremInstance]:
    return [
        TheoremInstance(multiplier=PresetBlock(preset="imaginary_power", params={"s_im": 2.0})),
        TheoremInstance(multiplier=PresetBlock(preset="heat", params={"t": 0.01})),
        TheoremInstance(
            multiplier=PresetBlock(preset="schrodinger", params={"alpha": 1.0, "t": 0.001})
        ),
    ]


def _default_held_out() -> list[TheoremInstance]:
    return [
        TheoremInstance(multiplier=PresetBlock(preset="imaginary_power", params={"s_im": 1.0})),
        TheoremInstance(multiplier=PresetBlock(preset="wave", params={"alpha": 1.0, "t": 0.01})),
        TheoremInstance(operator="riesz"),
    ]


class Theorem1Params(_Params):
    fit_instances: list[TheoremInstance] = Field(default_factory=_default_fit_instances)
    held_out: list[TheoremInstance] = Field(default_factory=_default_held_out)
    delta: float = Field(default=4.0, gt=0)
    p0: float = Field(default=2.0, gt=1.0)
    q0: float = Field(default=2.0, gt=1.0)
    slack: float = Field(default=1.2, ge=1.0)
    t_grid: GridSpec = Field(default_factory=lambda: GridSpec(points=6))
    assert_checks: bool = True


class FourierCheckParams(_Params):
    multiplier: PresetBlock = Field(
        default_factory=lambda: PresetBlock(preset="smooth_bump", params={"lo": 1.0, "hi": 8.0})
    )
    r: float = Field(default=8.0, gt=0)
    xi_max: float = Field(default=64.0, gt=0)
    panels: int = Field(default=2**14, ge=16)
    # relative to max |F(H)|; cutting at |xi| <= 64 leaves a few 1e-3 for the default bump
    tolerance: float = Field(default=1e-2, gt=0)


class ExploratoryParams(_Params):
    t_grid: GridSpec = Field(default_factory=GridSpec)
    region: RegionBlock | None = None


class FullParams(_Params):
    """Every other kind with its defaults, except where ``overrides`` sets params."""

    overrides: dict[ExperimentKind, dict[str, Any]] = Field(default_factory=dict)

    @field_validator("overrides")
    @classmethod
    def _no_nested_full(cls, value):
        if ExperimentKind.FULL in value:
            raise ValueError("full cannot override itself")
        return value


PARAMS_MODELS: dict[ExperimentKind, type[_Params]] = {
    ExperimentKind.DOUBLING: DoublingParams,
    ExperimentKind.ASSEMBLY: AssemblyParams,
    ExperimentKind.SUBORDINATION: SubordinationParamsBlock,
    ExperimentKind.GAUSSIAN: GaussianParams,
    ExperimentKind.SUPBOUNDS: SupBoundsParams,
    ExperimentKind.COMPLEX_TIME: ComplexTimeParams,
    ExperimentKind.DAVIES_GAFFNEY: DaviesGaffneyParams,
    ExperimentKind.OFFDIAG: OffDiagParams,
    ExperimentKind.DM: DMParams,
    ExperimentKind.MULTIPLIER_OSC: MultiplierOscParams,
    ExperimentKind.MIHLIN: MihlinParams,
    ExperimentKind.KERNEL_MOMENT: KernelMomentParams,
    ExperimentKind.SEMIGROUP_MOMENT: SemigroupMomentParams,
    ExperimentKind.RIESZ: RieszParams,
    ExperimentKind.CZ: CZParams,
    ExperimentKind.WEAK11: Weak11Params,
    ExperimentKind.IMAGINARY_POWERS: ImaginaryPowersParams,
    ExperimentKind.PROPAGATION: PropagationParams,
    ExperimentKind.THEOREM1: Theorem1Params,
    ExperimentKind.FOURIER_CHECK: FourierCheckParams,
    ExperimentKind.EXPLORATORY_NO_FACTOR: ExploratoryParams,
    ExperimentKind.FULL: FullParams,
}

# Grids measured in time (t) or in length (sqrt t), per kind and field name
GRID_SCALES: dict[ExperimentKind, dict[str, TimeScale]] = {
    ExperimentKind.GAUSSIAN: {"t_grid": TimeScale.TIME},
    ExperimentKind.SUPBOUNDS: {"t_grid": TimeScale.TIME},
    ExperimentKind.COMPLEX_TIME: {"radii": TimeScale.TIME},
    ExperimentKind.DAVIES_GAFFNEY: {"t_grid": TimeScale.TIME},
    ExperimentKind.SEMIGROUP_MOMENT: {"s_grid": TimeScale.TIME},
    ExperimentKind.EXPLORATORY_NO_FACTOR: {"t_grid": TimeScale.TIME},
    ExperimentKind.OFFDIAG: {"t_grid": TimeScale.LENGTH},
    ExperimentKind.DM: {"t_grid": TimeScale.LENGTH},
    ExperimentKind.MULTIPLIER_OSC: {"t_grid": TimeScale.LENGTH},
    ExperimentKind.THEOREM1: {"t_grid": TimeScale.LENGTH},
}


class ExperimentSpec(_Params):
    kind: ExperimentKind
    params: dict[str, Any] = Field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentPlan:
    """A validated experiment: its position in the expanded list, kind and params."""

    index: int
    kind: ExperimentKind
    params: _Params


class ExperimentConfig(_Params):
    schema_version: Literal["1"]
    space: SpaceBlock = Field(default_factory=SpaceBlock)
    coefficients: PresetBlock = Field(default_factory=lambda: PresetBlock(preset="identity"))
    cutoff: PresetBlock = Field(default_factory=lambda: PresetBlock(preset="constant"))
    cutoff_tilde: PresetBlock | None = None
    region: RegionBlock | None = None
    epsilon: float = Field(default=1.0, gt=0)
    experiments: list[ExperimentSpec] = Field(min_length=1)
    output_dir: str | None = None
    seed: int = 0

    _plans: list[ExperimentPlan] = PrivateAttr(default_factory=list)

    @property
    def plans(self) -> list[ExperimentPlan]:
        return self._plans

    def grid(self) -> GridSpace:
        return build_grid(
            self.space.dim, self.space.extent, self.space.N, self.space.boundary
        )

    @model_validator(mode="after")
    def _check_references(self, info: ValidationInfo):
        override = bool((info.context or {}).get("override_validity", False))
        try:
            space = self.grid()
        except GridError as e:
            raise ValueError(f"space: {e.reason}")
        if space.n_nodes > settings.MAX_NODES:
            raise ValueError(
                f"space: {space.n_nodes} nodes exceed the resource bound {settings.MAX_NODES}"
            )

        _check_preset(PresetFamily.FIELDS, self.coefficients, "coefficients")
        _check_preset(PresetFamily.CUTOFFS, self.cutoff, "cutoff")
        if self.cutoff_tilde is not None:
            _check_preset(PresetFamily.CUTOFFS, self.cutoff_tilde, "cutoff_tilde")
        _check_media(self, space)

        kinds = []
        for position, spec in enumerate(self.experiments):
            path = f"experiments.{position}.params"
            if spec.kind is not ExperimentKind.FULL:
                kinds.append((spec.kind, spec.params, path))
                continue
            try:
                full = FullParams.model_validate(spec.params)
            except ValidationError as e:
                raise ValueError(_format_errors(e, prefix=path))
            for k in ExperimentKind:
                if k is ExperimentKind.FULL:
                    continue
                if k in full.overrides:
                    kinds.append((k, full.overrides[k], f"{path}.overrides.{k.value}"))
                else:
                    kinds.append((k, {}, path))

        plans = []
        for index, (kind, raw, path) in enumerate(kinds):
            try:
                params = PARAMS_MODELS[kind].model_validate(raw)
            except ValidationError as e:
                raise ValueError(_format_errors(e, prefix=path))
            for name, block in _multiplier_blocks(params):
                _check_preset(PresetFamily.MULTIPLIERS, block, f"{path}.{name}")
            if getattr(params, "localizer", None) is Localizer.REGION and self.region is None:
                raise ValueError(f"{path}.localizer: 'region' needs a top-level region block")
            for name, scale in GRID_SCALES.get(kind, {}).items():
                _check_window(space, getattr(params, name), scale, f"{path}.{name}", override)
            plans.append(ExperimentPlan(index=index, kind=kind, params=params))
        self._plans = plans
        return self


def _multiplier_blocks(params: _Params):
    for name, value in params:
        if isinstance(value, PresetBlock):
            yield name, value
        elif isinstance(value, list):
            for k, item in enumerate(value):
                if isinstance(item, TheoremInstance) and item.multiplier is not None:
                    yield f"{name}.{k}.multiplier", item.multiplier


def _check_preset(family: PresetFamily, block: PresetBlock, path: str) -> None:
    try:
        get_preset_manager().resolve(family, block.preset, block.params, error=ConfigError)
    except ConfigError as e:
        raise ValueError(f"{path}: {e.reason}")


def _check_media(config: "ExperimentConfig", space: GridSpace) -> None:
    """Build the field, cutoffs and region once so setup errors surface here."""
    coefficients = config.coefficients
    blocks = [
        ("coefficients", lambda: make_field(coefficients.preset, coefficients.params)),
        ("cutoff", lambda: make_cutoff(config.cutoff.preset, config.cutoff.params, space)),
    ]
    if config.cutoff_tilde is not None:
        tilde = config.cutoff_tilde
        blocks.append(("cutoff_tilde", lambda: make_cutoff(tilde.preset, tilde.params, space)))
    if config.region is not None:
        region = config.region
        blocks.append(("region", lambda: make_region(space, region.lower, region.upper)))
    for path, build in blocks:
        try:
            build()
        except LabError as e:
            raise ValueError(f"{path}: {e.reason}")


def _check_window(
    space: GridSpace, grid: GridSpec, scale: TimeScale, path: str, override: bool
) -> None:
    if override or grid.allow_outside_window or not grid.explicit():
        return
    low, high = space.time_window if scale is TimeScale.TIME else space.length_window
    values = grid.resolve((low, high))
    outside = [v for v in values if not low * (1 - 1e-9) <= v <= high * (1 + 1e-9)]
    if outside:
        raise ValueError(
            f"{path}: {len(outside)} value(s) outside the validity window "
            f"[{low:.4g}, {high:.4g}]; set allow_outside_window or pass --override-validity"
        )


def _format_errors(error: ValidationError, prefix: str | None = None) -> str:
    messages = []
    for item in error.errors():
        loc = ".".join(str(part) for part in item["loc"])
        if prefix:
            loc = f"{prefix}.{loc}" if loc else prefix
        msg = item["msg"].removeprefix("Value error, ")
        messages.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(messages)


def load_config(path: str | Path, override_validity: bool = False) -> ExperimentConfig:
    """Read and validate an experiment config.

    Raises:
        ConfigError: The file is unreadable, not JSON, or fails validation.
            The message names the offending field path.
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in config {path}: {e}")
    return parse_config(data, override_validity=override_validity)


def parse_config(data: dict[str, Any], override_validity: bool = False) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(
            data, context={"override_validity": override_validity}
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid config: {_format_errors(e)}")

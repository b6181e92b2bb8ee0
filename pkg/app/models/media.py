"""Coefficient fields, cutoff functions and regions living on a grid space."""

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from app.core.logging import logger
from app.models.exceptions import MediaError
from app.models.operators import DiscreteOperator, multiplication
from app.models.space import GridSpace, Stagger
from app.utils.presets import PresetFamily, get_preset_manager
from app.utils.smooth import falling, smooth_step

PSD_TOLERANCE = 1e-12


def _point(value, dim: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(dim, float(arr[0]))
    if arr.size != dim:
        raise MediaError(f"Expected a point of dimension {dim}, got {arr.tolist()}")
    return arr


def _radial(points: np.ndarray, center) -> np.ndarray:
    return np.linalg.norm(points - _point(center, points.shape[1]), axis=1)


@dataclass(eq=False)
class CoefficientField:
    """Symmetric PSD matrix field a_kj(x), possibly degenerate."""

    preset_id: str
    params: dict[str, Any]
    evaluator: Callable[[np.ndarray], np.ndarray]
    bound: float

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Matrices a(x) of shape (m, d, d) at points of shape (m, d)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.evaluator(points)

    def __call__(self, point) -> np.ndarray:
        return self.evaluate(np.atleast_2d(point))[0]


def _plateau_profile(points: np.ndarray, center, radius: float, width: float):
    return falling(_radial(points, center), radius, radius + width)


def _identity_field(scale: float) -> Callable:
    def evaluator(points):
        m, d = points.shape
        return np.broadcast_to(scale * np.eye(d), (m, d, d)).copy()

    return evaluator


def _indicator_field(lower, upper) -> Callable:
    def evaluator(points):
        m, d = points.shape
        inside = np.all(
            (points >= _point(lower, d)) & (points < _point(upper, d)), axis=1
        )
        return inside[:, None, None] * np.eye(d)[None, :, :]

    return evaluator


def _plateau_field(center, radius, width) -> Callable:
    def evaluator(points):
        d = points.shape[1]
        psi = _plateau_profile(points, center, radius, width)
        return psi[:, None, None] * np.eye(d)[None, :, :]

    return evaluator


def _anisotropic_field(center, radius, width, eigenvalues, angle) -> Callable:
    def evaluator(points):
        d = points.shape[1]
        psi = _plateau_profile(points, center, radius, width)
        if d == 1:
            block = np.array([[eigenvalues[0]]])
        else:
            c, s = math.cos(angle), math.sin(angle)
            rotation = np.array([[c, -s], [s, c]])
            block = rotation @ np.diag(eigenvalues[:2]) @ rotation.T
            block = 0.5 * (block + block.T)
        return psi[:, None, None] * block[None, :, :]

    return evaluator


def make_field(preset_id: str, params: dict[str, Any] | None = None) -> CoefficientField:
    """Build a coefficient field from the preset catalog.

    Raises:
        MediaError: Unknown preset, unknown parameter, or parameters that make
            a(x) fail to be positive semidefinite.
    """
    params = get_preset_manager().resolve(
        PresetFamily.FIELDS, preset_id, params, error=MediaError
    )

    if preset_id == "identity":
        scale = float(params["scale"])
        if scale < 0:
            raise MediaError(f"identity scale must be >= 0, got {scale}")
        evaluator, bound = _identity_field(scale), scale
    elif preset_id == "indicator_region":
        evaluator, bound = _indicator_field(params["lower"], params["upper"]), 1.0
    elif preset_id in ("plateau_bump", "anisotropic_plateau"):
        radius, width = float(params["radius"]), float(params["width"])
        if radius < 0 or width <= 0:
            raise MediaError(f"plateau needs radius >= 0 and width > 0, got {radius}, {width}")
        if preset_id == "plateau_bump":
            evaluator, bound = _plateau_field(params["center"], radius, width), 1.0
        else:
            eigenvalues = [float(v) for v in params["eigenvalues"]]
            if min(eigenvalues) < 0:
                raise MediaError(f"eigenvalues must be >= 0, got {eigenvalues}")
            evaluator = _anisotropic_field(
                params["center"], radius, width, eigenvalues, float(params["angle"])
            )
            bound = max(eigenvalues)
    else:
        raise MediaError(f"Preset {preset_id} has no field builder")

    return CoefficientField(preset_id=preset_id, params=params, evaluator=evaluator, bound=bound)


@dataclass(eq=False)
class Cutoff:
    """Localization function chi with analytic sup and gradient bounds."""

    preset_id: str
    params: dict[str, Any]
    evaluator: Callable[[np.ndarray], np.ndarray]
    sup_norm: float
    grad_sup: float
    center: np.ndarray | None = None
    support_radius: float | None = None

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self.evaluator(points)

    def node_samples(self, space: GridSpace) -> np.ndarray:
        return self.evaluate(space.node_coords)

    def cell_samples(self, space: GridSpace) -> np.ndarray:
        if space.n_cells == 0:
            return np.zeros(0)
        return self.evaluate(space.cell_coords)

    def samples(self, space: GridSpace, stagger: Stagger = Stagger.NODES) -> np.ndarray:
        if stagger is Stagger.NODES:
            return self.node_samples(space)
        return self.cell_samples(space)

    def operator(self, space: GridSpace, stagger: Stagger = Stagger.NODES) -> DiscreteOperator:
        """Multiplication operator M_chi on node or cell functions."""
        return multiplication(
            space, self.samples(space, stagger), stagger, tag=f"M[{self.preset_id}]"
        )

    def check_margin(self, space: GridSpace) -> None:
        """Reject supports that reach within one grid step of the box boundary."""
        if self.support_radius is None:
            return
        center = _point(self.center, space.dim)
        for k in range(space.dim):
            low = center[k] - self.support_radius
            high = center[k] + self.support_radius
            h = space.spacing[k]
            if low < h or high > space.extent[k] - h:
                raise MediaError(
                    f"Cutoff {self.preset_id} support [{low:.4g}, {high:.4g}] on axis {k} "
                    f"exceeds the box interior [{h:.4g}, {space.extent[k] - h:.4g}]"
                )


def _smooth_bump_cutoff(center, radius: float) -> Callable:
    def evaluator(points):
        u2 = (_radial(points, center) / radius) ** 2
        out = np.zeros(points.shape[0])
        inside = u2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - u2[inside]))
        return out

    return evaluator


def _smooth_bump_slope() -> float:
    # |d/du exp(1 - 1/(1-u^2))| peaks where u^4 = 1/3
    u = 3.0**-0.25
    return 2 * u / (1 - u * u) ** 2 * math.exp(1.0 - 1.0 / (1.0 - u * u))


def make_cutoff(
    preset_id: str,
    params: dict[str, Any] | None = None,
    space: GridSpace | None = None,
) -> Cutoff:
    """Build a cutoff from the preset catalog.

    Args:
        preset_id: ``constant``, ``smooth_bump`` or ``plateau``
        params: Preset parameters
        space: When given, the support is checked against its interior margin

    Raises:
        MediaError: Unknown preset or parameter, invalid radii, or a support
            that leaves the box interior.
    """
    params = get_preset_manager().resolve(
        PresetFamily.CUTOFFS, preset_id, params, error=MediaError
    )

    if preset_id == "constant":
        value = float(params["value"])
        if value < 0:
            raise MediaError(f"constant cutoff must be >= 0, got {value}")
        cutoff = Cutoff(
            preset_id=preset_id,
            params=params,
            evaluator=lambda points: np.full(points.shape[0], value),
            sup_norm=value,
            grad_sup=0.0,
        )
    elif preset_id == "smooth_bump":
        radius = float(params["radius"])
        if radius <= 0:
            raise MediaError(f"smooth_bump radius must be > 0, got {radius}")
        cutoff = Cutoff(
            preset_id=preset_id,
            params=params,
            evaluator=_smooth_bump_cutoff(params["center"], radius),
            sup_norm=1.0,
            grad_sup=_smooth_bump_slope() / radius,
            center=np.atleast_1d(np.asarray(params["center"], dtype=float)),
            support_radius=radius,
        )
    elif preset_id == "plateau":
        inner, outer = float(params["inner"]), float(params["outer"])
        if inner < 0 or outer <= inner:
            raise MediaError(f"plateau needs 0 <= inner < outer, got {inner}, {outer}")
        center = params["center"]
        cutoff = Cutoff(
            preset_id=preset_id,
            params=params,
            evaluator=lambda points: falling(_radial(points, center), inner, outer),
            sup_norm=1.0,
            grad_sup=smooth_step().derivative_sup / (outer - inner),
            center=np.atleast_1d(np.asarray(center, dtype=float)),
            support_radius=outer,
        )
    else:
        raise MediaError(f"Preset {preset_id} has no cutoff builder")

    if space is not None:
        cutoff.check_margin(space)
    return cutoff


@dataclass(eq=False)
class Region:
    """Union of grid cells Omega with its node and cell masks."""

    space: GridSpace
    node_mask: np.ndarray
    cell_mask: np.ndarray
    descriptor: str

    @property
    def cell_indices(self) -> np.ndarray:
        return np.flatnonzero(self.cell_mask)

    @property
    def node_indices(self) -> np.ndarray:
        return np.flatnonzero(self.node_mask)

    def projection(self, stagger: Stagger = Stagger.NODES) -> DiscreteOperator:
        """P_Omega as a diagonal 0/1 operator."""
        mask = self.node_mask if stagger is Stagger.NODES else self.cell_mask
        return multiplication(
            self.space, mask.astype(float), stagger, tag=f"P[{self.descriptor}]"
        )

    @property
    def diameter(self) -> float:
        coords = self.space.node_coords[self.node_mask]
        if coords.shape[0] == 0:
            return 0.0
        return float(np.linalg.norm(np.ptp(coords, axis=0)) + max(self.space.spacing))


def make_region(
    space: GridSpace, lower: float | Sequence[float], upper: float | Sequence[float]
) -> Region:
    """Grid nodes and cells whose centers lie in the box [lower, upper)."""
    low, high = _point(lower, space.dim), _point(upper, space.dim)

    def inside(points):
        if points.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        return np.all((points >= low) & (points < high), axis=1)

    return Region(
        space=space,
        node_mask=inside(space.node_coords),
        cell_mask=inside(space.cell_coords),
        descriptor=f"box{low.tolist()}-{high.tolist()}",
    )


@dataclass
class EllipticityReport:
    region: str
    mu_required: float
    min_eigenvalue_found: float
    passed: bool
    violations: list[int] = field(default_factory=list)


def _support_cells(space: GridSpace, support) -> tuple[np.ndarray, str]:
    if support is None:
        return np.arange(space.n_cells), "all cells"
    if isinstance(support, Region):
        return support.cell_indices, support.descriptor
    if isinstance(support, Cutoff):
        return np.flatnonzero(support.cell_samples(space) > 0), f"supp {support.preset_id}"
    if isinstance(support, (tuple, list)):
        mask = np.zeros(space.n_cells, dtype=bool)
        for cutoff in support:
            mask |= cutoff.cell_samples(space) > 0
        names = " u ".join(f"supp {c.preset_id}" for c in support)
        return np.flatnonzero(mask), names
    return np.asarray(support, dtype=int), "cell set"


def ellipticity_check(
    field: CoefficientField,
    space: GridSpace,
    support=None,
    mu: float = 1.0,
    sample_density: int = 1,
) -> EllipticityReport:
    """Check a(x) >= mu I on the cells of a region or cutoff support.

    Args:
        field: Coefficient field
        space: Grid the cells belong to
        support: Region, Cutoff, tuple of cutoffs (union of supports), an
            explicit cell index array, or None for every cell
        mu: Required lower bound, > 0
        sample_density: Sample points per cell and axis; 1 checks centers only

    Returns:
        Report listing every cell with an eigenvalue below mu. A failed check
        is a report, not an error.
    """
    if mu <= 0:
        raise MediaError(f"mu must be positive, got {mu}")
    if sample_density < 1:
        raise MediaError(f"sample_density must be >= 1, got {sample_density}")
    cells, descriptor = _support_cells(space, support)
    if cells.size == 0:
        return EllipticityReport(descriptor, mu, math.inf, True)

    offsets = (np.arange(sample_density) + 0.5) / sample_density - 0.5
    mesh = np.meshgrid(*([offsets] * space.dim), indexing="ij")
    shifts = np.stack([m.ravel() for m in mesh], axis=-1) * np.asarray(space.spacing)

    centers = space.cell_coords[cells]
    points = (centers[:, None, :] + shifts[None, :, :]).reshape(-1, space.dim)
    eigen = np.linalg.eigvalsh(field.evaluate(points))[:, 0]
    per_cell = eigen.reshape(cells.size, -1).min(axis=1)

    bad = per_cell < mu * (1 - PSD_TOLERANCE)
    report = EllipticityReport(
        region=descriptor,
        mu_required=mu,
        min_eigenvalue_found=float(per_cell.min()),
        passed=not bool(bad.any()),
        violations=cells[bad].tolist(),
    )
    if not report.passed:
        logger.warning(
            f"Ellipticity mu={mu} fails on {len(report.violations)} cells of {descriptor}"
        )
    return report


def check_psd(field: CoefficientField, space: GridSpace) -> float:
    """Smallest eigenvalue of a(x) over nodes and cells; raises if negative."""
    points = np.vstack([space.node_coords, space.cell_coords])
    matrices = field.evaluate(points)
    if not np.allclose(matrices, np.swapaxes(matrices, 1, 2), atol=PSD_TOLERANCE):
        raise MediaError(f"Field {field.preset_id} is not symmetric")
    smallest = float(np.linalg.eigvalsh(matrices)[:, 0].min())
    if smallest < -PSD_TOLERANCE * max(field.bound, 1.0):
        raise MediaError(f"Field {field.preset_id} is not PSD: eigenvalue {smallest}")
    return smallest

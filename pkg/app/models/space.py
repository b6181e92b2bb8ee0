"""Finite metric measure spaces: uniform grids on boxes and tori.

Nodes sit at the midpoints ``(i + 1/2) h`` of a box ``[0, L)^d`` and carry the
measure ``prod(h)``; cells sit between neighbouring nodes (``(i + 1) h``) and
hold the discrete gradient. Periodic grids have ``N`` cells per axis (the last
one wraps), Neumann grids ``N - 1``.
"""

import enum
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from app.core.logging import logger
from app.models.exceptions import GridError


class Boundary(str, enum.Enum):
    """Truncation of the Euclidean space to a box."""

    PERIODIC = "periodic"
    NEUMANN = "neumann"


class Stagger(str, enum.Enum):
    """Where a grid function lives."""

    NODES = "nodes"
    CELLS = "cells"


@dataclass(frozen=True)
class GridSpace:
    dim: int
    extent: tuple[float, ...]
    nodes_per_axis: tuple[int, ...]
    boundary: Boundary

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.extent, self.nodes_per_axis))

    @property
    def n_nodes(self) -> int:
        return math.prod(self.nodes_per_axis)

    @cached_property
    def cells_per_axis(self) -> tuple[int, ...]:
        if self.periodic:
            return self.nodes_per_axis
        return tuple(max(N - 1, 0) for N in self.nodes_per_axis)

    @property
    def n_cells(self) -> int:
        return math.prod(self.cells_per_axis)

    @property
    def total_measure(self) -> float:
        return float(math.prod(self.extent))

    @property
    def point_measure(self) -> float:
        return float(math.prod(self.spacing))

    @cached_property
    def node_coords(self) -> np.ndarray:
        return self._lattice(self.nodes_per_axis, offset=0.5)

    @cached_property
    def cell_coords(self) -> np.ndarray:
        return self._lattice(self.cells_per_axis, offset=1.0)

    @cached_property
    def node_measure(self) -> np.ndarray:
        return np.full(self.n_nodes, self.point_measure)

    @cached_property
    def cell_measure(self) -> np.ndarray:
        return np.full(self.n_cells, self.point_measure)

    def coords(self, stagger: Stagger = Stagger.NODES) -> np.ndarray:
        return self.node_coords if stagger is Stagger.NODES else self.cell_coords

    def measure(self, stagger: Stagger = Stagger.NODES) -> np.ndarray:
        return self.node_measure if stagger is Stagger.NODES else self.cell_measure

    def _lattice(self, counts: Sequence[int], offset: float) -> np.ndarray:
        axes = [(np.arange(n) + offset) * h for n, h in zip(counts, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def distances(self, points_a: np.ndarray, points_b: np.ndarray) -> np.ndarray:
        """Pairwise metric between two point sets, torus distance when periodic."""
        delta = np.abs(points_a[:, None, :] - points_b[None, :, :])
        if self.periodic:
            extent = np.asarray(self.extent)
            delta = np.mod(delta, extent)
            delta = np.minimum(delta, extent - delta)
        return np.sqrt(np.sum(delta**2, axis=-1))

    def distances_from(
        self, center_index: int, stagger: Stagger = Stagger.NODES
    ) -> np.ndarray:
        center = self.node_coords[center_index][None, :]
        return self.distances(center, self.coords(stagger))[0]

    @property
    def time_window(self) -> tuple[float, float]:
        """Times t where discretization and box truncation are both negligible."""
        h = max(self.spacing)
        return 4.0 * h**2, (min(self.extent) / 4.0) ** 2

    @property
    def length_window(self) -> tuple[float, float]:
        low, high = self.time_window
        return math.sqrt(low), math.sqrt(high)

    @property
    def max_dyadic_level(self) -> int:
        return min(int(math.log2(N)) for N in self.nodes_per_axis)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "extent": list(self.extent),
            "nodes_per_axis": list(self.nodes_per_axis),
            "boundary": self.boundary.value,
        }


@lru_cache(maxsize=8)
def distance_matrix(
    space: GridSpace,
    rows: Stagger = Stagger.NODES,
    cols: Stagger = Stagger.NODES,
) -> np.ndarray:
    """Cached metric between all ``rows`` points and all ``cols`` points."""
    matrix = space.distances(space.coords(rows), space.coords(cols))
    matrix.setflags(write=False)
    return matrix


def _as_tuple(value, dim: int, cast) -> tuple:
    if isinstance(value, (int, float)):
        return tuple(cast(value) for _ in range(dim))
    values = tuple(cast(v) for v in value)
    if len(values) != dim:
        raise GridError(f"Expected {dim} per-axis values, got {len(values)}")
    return values


def build_grid(
    dim: int,
    extent: float | Sequence[float],
    nodes_per_axis: int | Sequence[int],
    boundary: Boundary | str = Boundary.PERIODIC,
) -> GridSpace:
    """Build a uniform grid on a box or torus.

    Args:
        dim: Spatial dimension, 1 or 2
        extent: Box side length L (scalar or per axis)
        nodes_per_axis: Node count N per axis, a power of two
        boundary: ``periodic`` or ``neumann``

    Raises:
        GridError: On a dimension outside {1, 2}, a non power-of-two N
            (breaks the dyadic cube tree) or a non-positive extent.
    """
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}")
    extents = _as_tuple(extent, dim, float)
    counts = _as_tuple(nodes_per_axis, dim, int)
    if any(L <= 0 for L in extents):
        raise GridError(f"extent must be positive, got {extents}")
    for N in counts:
        if N < 1 or N & (N - 1):
            raise GridError(f"nodes_per_axis must be a power of 2, got {N}")
    try:
        boundary = Boundary(boundary)
    except ValueError as e:
        raise GridError(f"Unknown boundary: {boundary}") from e

    space = GridSpace(dim=dim, extent=extents, nodes_per_axis=counts, boundary=boundary)
    logger.info(f"Built {boundary.value} grid {counts} on extent {extents}")
    return space


def ball(space: GridSpace, center_index: int, r: float) -> np.ndarray:
    """Node indices of the open ball B(x, r)."""
    if r <= 0:
        raise GridError(f"ball radius must be positive, got {r}")
    return np.flatnonzero(space.distances_from(center_index) < r)


def annulus(space: GridSpace, center_index: int, j: int, r: float) -> np.ndarray:
    """Dyadic annulus C_j(x, r); C_1 is the whole ball B(x, 4r)."""
    if j < 1:
        raise GridError(f"annulus index must be >= 1, got {j}")
    if r <= 0:
        raise GridError(f"annulus radius must be positive, got {r}")
    rho = space.distances_from(center_index)
    if j == 1:
        return np.flatnonzero(rho < 4 * r)
    return np.flatnonzero((rho >= 2**j * r) & (rho < 2 ** (j + 1) * r))


def linear_annulus(space: GridSpace, center_index: int, j: int, r: float) -> np.ndarray:
    """Linear annulus B(x, (j+1)r) minus B(x, jr)."""
    if j < 0:
        raise GridError(f"annulus index must be >= 0, got {j}")
    if r <= 0:
        raise GridError(f"annulus radius must be positive, got {r}")
    rho = space.distances_from(center_index)
    return np.flatnonzero((rho >= j * r) & (rho < (j + 1) * r))


def volume(
    space: GridSpace, index_set: np.ndarray, stagger: Stagger = Stagger.NODES
) -> float:
    index_set = np.asarray(index_set, dtype=int)
    if index_set.size == 0:
        return 0.0
    return float(np.sum(space.measure(stagger)[index_set]))


def dyadic_cubes(space: GridSpace, level: int) -> np.ndarray:
    """Node index sets of the dyadic cubes at ``level`` (0 is the whole box).

    Returns:
        Array of shape (number of cubes, nodes per cube), cubes in
        lexicographic order of their corner.
    """
    if not 0 <= level <= space.max_dyadic_level:
        raise GridError(
            f"dyadic level must lie in [0, {space.max_dyadic_level}], got {level}"
        )
    index = np.arange(space.n_nodes).reshape(space.nodes_per_axis)
    split = 2**level
    if space.dim == 1:
        return index.reshape(split, -1)
    n0, n1 = space.nodes_per_axis
    blocks = index.reshape(split, n0 // split, split, n1 // split)
    return blocks.transpose(0, 2, 1, 3).reshape(split * split, -1)


@dataclass
class DoublingReport:
    C0: float
    C1: float
    d_eff: float
    r_window: tuple[float, float]
    lambdas: tuple[float, ...]
    samples: list[tuple[int, float]] = field(default_factory=list)

    def holds(self, space: GridSpace, center_index: int, r: float, lam: float) -> bool:
        """Re-check v(x, lam r) <= C1 lam^d v(x, r) on a fresh sample."""
        small = volume(space, ball(space, center_index, r))
        large = volume(space, ball(space, center_index, lam * r))
        return large <= self.C1 * lam**self.d_eff * small * (1 + 1e-12)


def doubling_report(
    space: GridSpace,
    sample_count: int,
    rng_seed: int = 0,
    lambdas: Sequence[float] = (2.0, 4.0, 8.0),
    r_range: tuple[float, float] | None = None,
) -> DoublingReport:
    """Estimate doubling constants on sampled balls.

    C0 is the largest observed v(x, 2r)/v(x, r); (C1, d_eff) come from a least
    squares fit of log v(x, lam r)/v(x, r) against log lam, with C1 then raised
    until the inequality holds on every sample.

    Args:
        space: Grid to probe
        sample_count: Number of (x, r) samples
        rng_seed: Seed of the sampler
        lambdas: Dilation factors used in the fit
        r_range: Radius window; defaults to [2h, L/4]
    """
    if sample_count < 1:
        raise GridError(f"sample_count must be >= 1, got {sample_count}")
    rng = np.random.default_rng(rng_seed)

    h = max(space.spacing)
    r_low, r_high = r_range if r_range is not None else (2 * h, min(space.extent) / 4)
    if r_high < r_low:
        # Single-node scale: every ball is its centre
        r_low = r_high = h / 4

    centers = rng.integers(0, space.n_nodes, size=sample_count)
    radii = np.exp(rng.uniform(math.log(r_low), math.log(r_high), size=sample_count))

    c0 = 1.0
    log_lams, log_ratios = [], []
    for x, r in zip(centers, radii):
        rho = space.distances_from(int(x))
        base = np.sum(space.node_measure[rho < r])
        c0 = max(c0, np.sum(space.node_measure[rho < 2 * r]) / base)
        for lam in lambdas:
            ratio = np.sum(space.node_measure[rho < lam * r]) / base
            log_lams.append(math.log(lam))
            log_ratios.append(math.log(ratio))

    log_lams = np.asarray(log_lams)
    log_ratios = np.asarray(log_ratios)
    if np.ptp(log_lams) > 0:
        d_eff, intercept = np.polyfit(log_lams, log_ratios, 1)
    else:
        d_eff, intercept = 0.0, float(np.max(log_ratios))
    c1 = max(math.exp(intercept), float(np.max(np.exp(log_ratios - d_eff * log_lams))))

    logger.info(f"Doubling report: C0={c0:.4g}, C1={c1:.4g}, d_eff={d_eff:.4g}")
    return DoublingReport(
        C0=float(c0),
        C1=c1,
        d_eff=float(d_eff),
        r_window=(float(r_low), float(r_high)),
        lambdas=tuple(float(lam) for lam in lambdas),
        samples=[(int(x), float(r)) for x, r in zip(centers, radii)],
    )

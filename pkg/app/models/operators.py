"""Operator types on grid spaces: generic operators, gradient maps and
eigensystems."""

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import sparse

from app.models.exceptions import AssemblyError
from app.models.space import GridSpace, Stagger


@dataclass(eq=False)
class DiscreteOperator:
    """Linear map between node or cell functions of one space.

    Exactly one of ``matrix`` (dense or scipy sparse) and ``diagonal`` is set.
    """

    space: GridSpace
    tag: str
    matrix: Any = None
    diagonal: np.ndarray | None = None
    domain: Stagger = Stagger.NODES
    codomain: Stagger = Stagger.NODES
    epsilon: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.matrix is None) == (self.diagonal is None):
            raise AssemblyError(f"{self.tag}: exactly one of matrix/diagonal required")
        if self.diagonal is not None and self.domain is not self.codomain:
            raise AssemblyError(f"{self.tag}: a diagonal operator cannot change stagger")
        rows = self.space.n_nodes if self.codomain is Stagger.NODES else self.space.n_cells
        cols = self.space.n_nodes if self.domain is Stagger.NODES else self.space.n_cells
        if self.shape != (rows, cols):
            raise AssemblyError(
                f"{self.tag}: shape {self.shape} does not match "
                f"{self.codomain.value} x {self.domain.value} = {(rows, cols)}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        if self.diagonal is not None:
            return (self.diagonal.size, self.diagonal.size)
        return tuple(self.matrix.shape)

    @property
    def is_diagonal(self) -> bool:
        return self.diagonal is not None

    @property
    def is_gradient(self) -> bool:
        return self.domain is Stagger.NODES and self.codomain is Stagger.CELLS

    def dense(self) -> np.ndarray:
        if self.diagonal is not None:
            return np.diag(self.diagonal)
        if sparse.issparse(self.matrix):
            return self.matrix.toarray()
        return np.asarray(self.matrix)

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self.diagonal is not None:
            return self.diagonal * u
        return self.matrix @ u

    def mu_inner(self, u: np.ndarray, v: np.ndarray) -> complex:
        """<Tu, v> in L^2 of the codomain measure."""
        weights = self.space.measure(self.codomain)
        return np.sum(self.apply(u) * np.conj(v) * weights)


def multiplication(
    space: GridSpace, values: np.ndarray, stagger: Stagger = Stagger.NODES, tag: str = "M"
) -> DiscreteOperator:
    return DiscreteOperator(
        space=space,
        tag=tag,
        diagonal=np.asarray(values, dtype=float),
        domain=stagger,
        codomain=stagger,
    )


def identity(space: GridSpace, stagger: Stagger = Stagger.NODES) -> DiscreteOperator:
    size = space.n_nodes if stagger is Stagger.NODES else space.n_cells
    return multiplication(space, np.ones(size), stagger, tag="I")


@dataclass(eq=False)
class GradientMaps:
    """Per-axis node-to-cell difference maps, one CSR matrix per axis."""

    space: GridSpace
    maps: tuple[sparse.csr_matrix, ...]

    def __getitem__(self, axis: int) -> sparse.csr_matrix:
        return self.maps[axis]

    def __len__(self) -> int:
        return len(self.maps)

    def operator(self, axis: int) -> DiscreteOperator:
        return DiscreteOperator(
            space=self.space,
            tag=f"G{axis}",
            matrix=self.maps[axis],
            domain=Stagger.NODES,
            codomain=Stagger.CELLS,
        )


@dataclass(eq=False)
class SpectralDecomposition:
    """Eigensystem of an operator that is self-adjoint in L^2(mu).

    ``vectors`` are orthonormal in the mu-inner product: V^T diag(mu) V = I.
    """

    space: GridSpace
    eigenvalues: np.ndarray
    vectors: np.ndarray
    measure: np.ndarray
    epsilon: float
    residual: float
    tag: str = "H"

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def synthesize(self, values: np.ndarray) -> np.ndarray:
        """Matrix V diag(values) V^T diag(mu)."""
        return (self.vectors * values) @ (self.vectors.T * self.measure)

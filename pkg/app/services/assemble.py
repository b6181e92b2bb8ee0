"""Assembly of the form operator A, its shift H = A + eps I and composite
operators built from cutoffs, projections, gradients and spectral functions."""

import itertools

import numpy as np
from scipy import sparse

from app.core.config import settings
from app.core.logging import logger
from app.models.exceptions import AssemblyError, ResourceBoundError, StaggerError
from app.models.media import CoefficientField, Cutoff
from app.models.operators import (
    DiscreteOperator,
    GradientMaps,
    SpectralDecomposition,
)
from app.models.space import GridSpace, Stagger
from app.services.spectral import inv_sqrt


def _check_size(space: GridSpace) -> None:
    if space.n_nodes > settings.MAX_NODES:
        raise ResourceBoundError(
            f"{space.n_nodes} nodes exceed the bound MAX_NODES={settings.MAX_NODES}"
        )


def discrete_gradient(space: GridSpace) -> GradientMaps:
    """Cell-centered gradient: each G_k averages the forward differences along
    the 2^(d-1) cell edges parallel to axis k.

    On periodic grids the last cell of each axis wraps around, so u(x) = x_k
    has G_k u = 1 everywhere except on that wrap cell.
    """
    d = space.dim
    mesh = np.meshgrid(*[np.arange(n) for n in space.cells_per_axis], indexing="ij")
    cells = np.stack([m.ravel() for m in mesh], axis=-1).astype(int)
    cell_ids = np.arange(space.n_cells)
    weight = 1.0 / 2 ** (d - 1)

    maps = []
    for k in range(d):
        rows, cols, vals = [], [], []
        scale = weight / space.spacing[k]
        for offset in itertools.product((0, 1), repeat=d):
            if offset[k]:
                continue
            base = cells + np.asarray(offset, dtype=int)
            tip = base.copy()
            tip[:, k] += 1
            for corner, sign in ((tip, 1.0), (base, -1.0)):
                nodes = np.ravel_multi_index(
                    tuple(corner.T), space.nodes_per_axis, mode="wrap"
                )
                rows.append(cell_ids)
                cols.append(nodes)
                vals.append(np.full(space.n_cells, sign * scale))
        matrix = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(space.n_cells, space.n_nodes),
        ).tocsr()
        matrix.eliminate_zeros()
        maps.append(matrix)
    return GradientMaps(space=space, maps=tuple(maps))


def stiffness_matrix(space: GridSpace, field: CoefficientField) -> sparse.csr_matrix:
    """S with u^T S v = sum over cells of a_kj (G_j u)(G_k v) |cell|."""
    if space.n_cells == 0:
        return sparse.csr_matrix((space.n_nodes, space.n_nodes))
    grads = discrete_gradient(space)
    coeffs = field.evaluate(space.cell_coords)
    if coeffs.shape[1:] != (space.dim, space.dim):
        raise AssemblyError(
            f"Field {field.preset_id} returns {coeffs.shape[1:]} blocks on a "
            f"{space.dim}-dimensional grid"
        )
    cell_volume = space.cell_measure

    stiffness = sparse.csr_matrix((space.n_nodes, space.n_nodes))
    for k in range(space.dim):
        for j in range(space.dim):
            weights = coeffs[:, k, j] * cell_volume
            if not np.any(weights):
                continue
            stiffness = stiffness + grads[k].T @ sparse.diags(weights) @ grads[j]
    return (0.5 * (stiffness + stiffness.T)).tocsr()


def assemble_form_operator(space: GridSpace, field: CoefficientField) -> DiscreteOperator:
    """Operator A with <Au, v>_mu = a0(u, v), as a dense matrix diag(mu)^-1 S.

    Raises:
        ResourceBoundError: More than MAX_NODES nodes.
        AssemblyError: Field and grid dimensions disagree.
    """
    _check_size(space)
    stiffness = stiffness_matrix(space, field)
    matrix = stiffness.toarray() / space.node_measure[:, None]
    logger.info(
        f"Assembled A for field {field.preset_id} on {space.n_nodes} nodes "
        f"({stiffness.nnz} stiffness entries)"
    )
    return DiscreteOperator(
        space=space,
        tag="A",
        matrix=matrix,
        meta={"field": field.preset_id, "stiffness_nnz": int(stiffness.nnz)},
    )


def form_energy(space: GridSpace, field: CoefficientField, u: np.ndarray) -> float:
    """a0(u, u) summed cell by cell, independent of the assembled matrix."""
    grads = discrete_gradient(space)
    coeffs = field.evaluate(space.cell_coords)
    gu = np.stack([grads[k] @ u for k in range(space.dim)], axis=-1)
    return float(np.einsum("ck,ckj,cj,c->", gu, coeffs, gu, space.cell_measure))


def shift_identity(A: DiscreteOperator, epsilon: float = 1.0) -> DiscreteOperator:
    """H = A + eps I; eps = 1 gives H = A + I."""
    if epsilon <= 0:
        raise AssemblyError(f"epsilon must be positive, got {epsilon}")
    matrix = A.dense() + epsilon * np.eye(A.shape[0])
    return DiscreteOperator(
        space=A.space, tag="H", matrix=matrix, epsilon=epsilon, meta=dict(A.meta)
    )


def compose(*factors: DiscreteOperator) -> DiscreteOperator:
    """Product of operators in the written order (leftmost applied last).

    A gradient factor (node to cell) must be immediately preceded by a
    diagonal multiplication on cells, as in M_chi G_k H^-1/2 M_chi.

    Raises:
        AssemblyError: No factors or factors on different spaces.
        StaggerError: Adjacent factors whose node/cell staggers do not chain.
    """
    if not factors:
        raise AssemblyError("compose needs at least one factor")
    space = factors[0].space
    for position, factor in enumerate(factors):
        if factor.space != space:
            raise AssemblyError(f"Factor {position} ({factor.tag}) lives on another space")
        if factor.is_gradient:
            left = factors[position - 1] if position > 0 else None
            if left is None or not (left.is_diagonal and left.domain is Stagger.CELLS):
                raise StaggerError(
                    f"Gradient factor {factor.tag} must be preceded by a cell cutoff"
                )
    for position in range(len(factors) - 1):
        left, right = factors[position], factors[position + 1]
        if left.domain is not right.codomain:
            raise StaggerError(
                f"{left.tag} takes {left.domain.value} but {right.tag} "
                f"yields {right.codomain.value}"
            )

    result = factors[-1]
    diagonal = result.diagonal
    matrix = None if diagonal is not None else result.matrix
    for factor in reversed(factors[:-1]):
        if factor.is_diagonal and diagonal is not None:
            diagonal = factor.diagonal * diagonal
        elif factor.is_diagonal:
            matrix = _scale_rows(factor.diagonal, matrix)
        elif diagonal is not None:
            matrix = _scale_cols(factor.matrix, diagonal)
            diagonal = None
        else:
            matrix = factor.matrix @ matrix
    if matrix is not None and sparse.issparse(matrix):
        matrix = matrix.toarray()

    return DiscreteOperator(
        space=space,
        tag="*".join(f.tag for f in factors),
        matrix=matrix,
        diagonal=diagonal,
        domain=factors[-1].domain,
        codomain=factors[0].codomain,
        epsilon=max(f.epsilon for f in factors),
    )


def _scale_rows(values: np.ndarray, matrix):
    if sparse.issparse(matrix):
        return sparse.diags(values) @ matrix
    return values[:, None] * matrix


def _scale_cols(matrix, values: np.ndarray):
    if sparse.issparse(matrix):
        return matrix @ sparse.diags(values)
    return matrix * values[None, :]


def riesz_matrix(
    space: GridSpace, decomposition: SpectralDecomposition, cutoff: Cutoff, axis: int
) -> DiscreteOperator:
    """Partial Riesz transform M_chi G_k H^-1/2 M_chi (nodes to cells)."""
    if not 0 <= axis < space.dim:
        raise AssemblyError(f"axis must lie in [0, {space.dim}), got {axis}")
    grads = discrete_gradient(space)
    return compose(
        cutoff.operator(space, Stagger.CELLS),
        grads.operator(axis),
        inv_sqrt(decomposition),
        cutoff.operator(space, Stagger.NODES),
    )


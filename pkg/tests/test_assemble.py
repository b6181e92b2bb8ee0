"""
This module contains tests for the assembly of the form operator A, the shift
H = A + eps I and operator composition.

To run the tests in this file individually, use the following command:
    pytest tests/test_assemble.py
"""

import logging

import numpy as np
import pytest

from app.core.config import settings
from app.models.exceptions import AssemblyError, ResourceBoundError, StaggerError
from app.models.media import make_cutoff, make_field
from app.models.operators import identity
from app.models.space import Stagger, build_grid
from app.services.assemble import (
    assemble_form_operator,
    compose,
    discrete_gradient,
    form_energy,
    riesz_matrix,
    shift_identity,
)
from app.services.spectral import eigendecompose

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


@pytest.fixture
def line():
    return build_grid(1, 1.0, 64)


def test_periodic_spectrum_matches_closed_form():
    N = 256
    space = build_grid(1, 1.0, N)
    A = assemble_form_operator(space, make_field("identity"))
    found = np.linalg.eigvalsh(A.dense())
    h = 1 / N
    exact = np.sort((2 - 2 * np.cos(2 * np.pi * np.arange(N) / N)) / h**2)
    error = np.abs(found - exact) / np.maximum(exact, 1e-8 * exact[-1])
    assert error.max() <= 1e-9
    logger.info(f"max relative eigenvalue error {error.max():.2e}")


@pytest.mark.parametrize(
    "dim, N, boundary, preset, params",
    [
        (1, 64, "periodic", "identity", {"scale": 2.0}),
        (1, 64, "neumann", "indicator_region", {"lower": 0.25, "upper": 0.75}),
        (2, 16, "periodic", "plateau_bump", {"center": 0.5, "radius": 0.2, "width": 0.1}),
        (2, 16, "neumann", "anisotropic_plateau", {"center": 0.5, "radius": 0.2, "width": 0.1}),
    ],
)
def test_form_operator_properties(dim, N, boundary, preset, params):
    space = build_grid(dim, 1.0, N, boundary)
    field = make_field(preset, params)
    A = assemble_form_operator(space, field).dense()
    mu = space.node_measure
    stiffness = mu[:, None] * A
    scale = np.abs(stiffness).max()

    assert np.abs(stiffness - stiffness.T).max() <= 1e-12 * scale
    assert np.abs(A @ np.ones(space.n_nodes)).max() <= 1e-9 * np.abs(A).max()

    rng = np.random.default_rng(0)
    u = rng.standard_normal(space.n_nodes)
    energy = form_energy(space, field, u)
    assert energy >= 0
    assert energy == pytest.approx(np.sum((A @ u) * u * mu), rel=1e-9)


def test_degenerate_field_leaves_outside_nodes_untouched():
    space = build_grid(1, 1.0, 64, "neumann")
    field = make_field("indicator_region", {"lower": 0.25, "upper": 0.75})
    A = assemble_form_operator(space, field).dense()
    outside = space.node_coords[:, 0] < 0.2
    assert np.all(A[outside] == 0)


def test_gradient_of_linear_function():
    space = build_grid(1, 1.0, 32, "neumann")
    G = discrete_gradient(space)[0]
    x = space.node_coords[:, 0]
    assert np.allclose(G @ x, 1.0)


def test_shift_identity(line):
    A = assemble_form_operator(line, make_field("identity"))
    H = shift_identity(A, 0.5)
    assert H.epsilon == 0.5
    assert np.allclose(H.dense() - A.dense(), 0.5 * np.eye(line.n_nodes))
    assert eigendecompose(H).lambda_min == pytest.approx(0.5)
    with pytest.raises(AssemblyError):
        shift_identity(A, 0.0)


def test_resource_bound(monkeypatch, line):
    monkeypatch.setattr(settings, "MAX_NODES", 32)
    with pytest.raises(ResourceBoundError) as excinfo:
        assemble_form_operator(line, make_field("identity"))
    assert excinfo.value.status == 2


def test_compose_checks_staggers(line):
    G = discrete_gradient(line).operator(0)
    M_nodes = identity(line)
    M_cells = identity(line, Stagger.CELLS)
    with pytest.raises(StaggerError):
        compose(M_nodes, G)
    with pytest.raises(StaggerError):
        compose(G, M_nodes)
    with pytest.raises(AssemblyError):
        compose()
    product = compose(M_cells, G, M_nodes)
    assert product.domain is Stagger.NODES and product.codomain is Stagger.CELLS
    assert np.allclose(product.dense(), G.dense())


def test_compose_of_diagonals_stays_diagonal(line):
    chi = make_cutoff("plateau", {"center": 0.5, "inner": 0.1, "outer": 0.3}, line)
    M = chi.operator(line)
    product = compose(M, M)
    assert product.is_diagonal
    assert np.allclose(product.diagonal, chi.node_samples(line) ** 2)


def test_riesz_matrix_shape(line):
    field = make_field("identity")
    H = shift_identity(assemble_form_operator(line, field))
    decomposition = eigendecompose(H)
    chi = make_cutoff("plateau", {"center": 0.5, "inner": 0.1, "outer": 0.3}, line)
    R = riesz_matrix(line, decomposition, chi, 0)
    assert R.shape == (line.n_cells, line.n_nodes)
    assert R.codomain is Stagger.CELLS
    with pytest.raises(AssemblyError):
        riesz_matrix(line, decomposition, chi, 1)

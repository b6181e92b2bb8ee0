"""
This module contains tests for the grid spaces: geometry, balls and annuli,
dyadic cubes and the doubling estimates.

To run the tests in this file individually, use the following command:
    pytest tests/test_space.py
"""

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.models.exceptions import GridError
from app.models.space import (
    Boundary,
    Stagger,
    annulus,
    ball,
    build_grid,
    distance_matrix,
    doubling_report,
    dyadic_cubes,
    linear_annulus,
    volume,
)

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


@pytest.fixture
def line():
    return build_grid(1, 1.0, 64)


def test_periodic_geometry(line):
    h = 1 / 64
    assert line.spacing == (h,)
    assert line.n_nodes == 64
    assert line.n_cells == 64
    assert line.node_coords[0, 0] == pytest.approx(h / 2)
    assert line.cell_coords[0, 0] == pytest.approx(h)
    assert np.sum(line.node_measure) == pytest.approx(1.0)


def test_neumann_has_one_cell_less_per_axis():
    space = build_grid(2, 1.0, 8, Boundary.NEUMANN)
    assert space.cells_per_axis == (7, 7)
    assert space.n_cells == 49
    assert space.cell_coords.shape == (49, 2)


def test_torus_distance_wraps(line):
    h = line.spacing[0]
    rho = line.distances_from(0)
    assert rho[63] == pytest.approx(h)
    assert rho.max() == pytest.approx(0.5)


def test_neumann_distance_does_not_wrap():
    space = build_grid(1, 1.0, 64, "neumann")
    assert space.distances_from(0)[63] == pytest.approx(63 / 64)


def test_distance_matrix_between_staggers(line):
    rho = distance_matrix(line, Stagger.CELLS, Stagger.NODES)
    assert rho.shape == (line.n_cells, line.n_nodes)
    # cell 0 sits halfway between nodes 0 and 1
    assert rho[0, 0] == pytest.approx(line.spacing[0] / 2)
    assert not rho.flags.writeable


@pytest.mark.parametrize(
    "kwargs",
    [
        {"dim": 3, "extent": 1.0, "nodes_per_axis": 8},
        {"dim": 1, "extent": 1.0, "nodes_per_axis": 48},
        {"dim": 1, "extent": 0.0, "nodes_per_axis": 8},
        {"dim": 2, "extent": [1.0], "nodes_per_axis": 8},
        {"dim": 1, "extent": 1.0, "nodes_per_axis": 8, "boundary": "dirichlet"},
    ],
)
def test_build_grid_rejects_bad_input(kwargs):
    with pytest.raises(GridError):
        build_grid(**kwargs)


def test_time_window(line):
    h = line.spacing[0]
    low, high = line.time_window
    assert low == pytest.approx(4 * h * h)
    assert high == pytest.approx(1 / 16)
    assert line.length_window == pytest.approx((2 * h, 0.25))


def test_ball_and_annuli(line):
    h = line.spacing[0]
    assert sorted(ball(line, 0, 1.5 * h)) == [0, 1, 63]
    r = 2 * h
    assert set(annulus(line, 10, 1, r)) == set(ball(line, 10, 4 * r))
    ring = annulus(line, 10, 2, r)
    rho = line.distances_from(10)[ring]
    assert np.all((rho >= 4 * r) & (rho < 8 * r))
    assert volume(line, linear_annulus(line, 10, 0, r)) == pytest.approx(
        volume(line, ball(line, 10, r))
    )
    with pytest.raises(GridError):
        annulus(line, 0, 0, r)
    with pytest.raises(GridError):
        ball(line, 0, 0.0)


def test_dyadic_cubes_partition_the_grid():
    space = build_grid(2, 1.0, 8)
    cubes = dyadic_cubes(space, 1)
    assert cubes.shape == (4, 16)
    assert sorted(cubes.ravel()) == list(range(64))
    assert dyadic_cubes(space, 0).shape == (1, 64)
    with pytest.raises(GridError):
        dyadic_cubes(space, space.max_dyadic_level + 1)


def test_doubling_report_covers_its_samples(line):
    report = doubling_report(line, 32, rng_seed=3)
    assert 1.0 <= report.C0 <= 3.0
    assert 0.0 < report.d_eff <= 1.5
    for x, r in report.samples:
        for lam in report.lambdas:
            assert report.holds(line, x, r, lam)
    logger.info(f"C0={report.C0:.3f} C1={report.C1:.3f} d_eff={report.d_eff:.3f}")


@settings(max_examples=50, deadline=None)
@given(
    x=st.integers(min_value=0, max_value=63),
    y=st.integers(min_value=0, max_value=63),
    r=st.floats(min_value=0.01, max_value=0.6),
)
def test_ball_membership_is_symmetric(x, y, r):
    space = build_grid(1, 1.0, 64)
    assert (y in ball(space, x, r)) == (x in ball(space, y, r))

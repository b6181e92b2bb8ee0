"""
This module contains tests for coefficient fields, cutoffs and regions.

To run the tests in this file individually, use the following command:
    pytest tests/test_media.py
"""

import logging

import numpy as np
import pytest

from app.models.exceptions import MediaError
from app.models.media import (
    check_psd,
    ellipticity_check,
    make_cutoff,
    make_field,
    make_region,
)
from app.models.space import Stagger, build_grid

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


@pytest.fixture
def line():
    return build_grid(1, 1.0, 64)


def test_identity_field_matches_scale():
    field = make_field("identity", {"scale": 2.5})
    values = field.evaluate(np.array([[0.1, 0.2], [0.7, 0.3]]))
    assert values.shape == (2, 2, 2)
    assert np.allclose(values, 2.5 * np.eye(2))
    assert field.bound == 2.5


def test_indicator_field_vanishes_outside(line):
    field = make_field("indicator_region", {"lower": 0.25, "upper": 0.75})
    assert field(np.array([0.5]))[0, 0] == 1.0
    assert field(np.array([0.1]))[0, 0] == 0.0
    assert check_psd(field, line) == 0.0


def test_anisotropic_plateau_is_psd():
    space = build_grid(2, 1.0, 16)
    field = make_field(
        "anisotropic_plateau",
        {"center": [0.5, 0.5], "radius": 0.2, "width": 0.1, "eigenvalues": [1.0, 0.25], "angle": 0.3},
    )
    assert check_psd(field, space) >= -1e-12
    center = field(np.array([0.5, 0.5]))
    assert np.allclose(np.linalg.eigvalsh(center), [0.25, 1.0])


@pytest.mark.parametrize(
    "preset, params",
    [
        ("identity", {"scale": -1.0}),
        ("identity", {"unknown": 1.0}),
        ("plateau_bump", {"center": 0.5, "radius": 0.2, "width": 0.0}),
        ("no_such_field", {}),
    ],
)
def test_make_field_rejects_bad_presets(preset, params):
    with pytest.raises(MediaError):
        make_field(preset, params)


def test_plateau_cutoff_samples(line):
    cutoff = make_cutoff("plateau", {"center": 0.5, "inner": 0.15, "outer": 0.3}, line)
    chi = cutoff.node_samples(line)
    x = line.node_coords[:, 0]
    assert np.all(chi[np.abs(x - 0.5) <= 0.15] == 1.0)
    assert np.all(chi[np.abs(x - 0.5) >= 0.3] == 0.0)
    assert np.all((chi >= 0) & (chi <= 1))
    assert cutoff.sup_norm == 1.0
    M = cutoff.operator(line, Stagger.CELLS)
    assert M.domain is Stagger.CELLS and M.codomain is Stagger.CELLS


def test_cutoff_support_must_stay_inside_the_box(line):
    with pytest.raises(MediaError):
        make_cutoff("smooth_bump", {"center": 0.1, "radius": 0.2}, line)
    # without a space there is nothing to check against
    make_cutoff("smooth_bump", {"center": 0.1, "radius": 0.2})


def test_region_masks_and_projection(line):
    region = make_region(line, 0.25, 0.75)
    assert region.node_mask.sum() == 32
    P = region.projection()
    u = np.ones(line.n_nodes)
    assert np.allclose(P.apply(u), region.node_mask.astype(float))
    assert region.diameter == pytest.approx(0.5)


def test_ellipticity_gate_on_plateau(line):
    field = make_field("plateau_bump", {"center": 0.5, "radius": 0.3, "width": 0.15})
    inside = make_cutoff("plateau", {"center": 0.5, "inner": 0.1, "outer": 0.25}, line)
    report = ellipticity_check(field, line, inside, mu=1.0)
    assert report.passed
    assert report.violations == []

    everywhere = ellipticity_check(field, line, None, mu=1.0)
    assert not everywhere.passed
    assert everywhere.min_eigenvalue_found == pytest.approx(0.0, abs=1e-12)


def test_ellipticity_rejects_nonpositive_mu(line):
    with pytest.raises(MediaError):
        ellipticity_check(make_field("identity"), line, None, mu=0.0)

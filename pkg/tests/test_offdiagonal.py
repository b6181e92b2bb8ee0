"""
This module contains tests for the off-diagonal annulus profiles and the
oscillation condition for singular integral operators.

To run the tests in this file individually, use the following command:
    pytest tests/test_offdiagonal.py
"""

import logging
import math

import numpy as np
import pytest

from app.models.exceptions import VerificationError
from app.models.media import make_field
from app.models.operators import identity
from app.models.space import ball, build_grid
from app.services.assemble import assemble_form_operator, shift_identity
from app.services.spectral import eigendecompose, propagator
from app.services.verify.offdiagonal import (
    ProbeFamily,
    dm_condition,
    grid_stability,
    off_diagonal_profile,
    probe_functions,
)

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


@pytest.fixture(scope="module")
def heat():
    space = build_grid(1, 1.0, 128)
    H = shift_identity(assemble_form_operator(space, make_field("identity")))
    return space, eigendecompose(H)


def test_probe_functions_live_in_the_ball():
    space = build_grid(1, 1.0, 64)
    rng = np.random.default_rng(3)
    support = ball(space, 10, 4 / 64)
    probes = dict(probe_functions(space, 10, 4 / 64, rng))
    assert set(probes) == set(ProbeFamily.ALL)
    assert probes["indicator"].sum() == support.size
    assert probes["delta"].sum() * space.node_measure[10] == pytest.approx(1.0)
    outside = np.setdiff1d(np.arange(64), support)
    for f in probes.values():
        assert np.all(f >= 0)
        assert np.all(f[outside] == 0)
    with pytest.raises(VerificationError):
        probe_functions(space, 10, 4 / 64, rng, family=("gaussian",))


def test_heat_profile_decays_across_annuli(heat):
    space, decomposition = heat
    t = 4 / 128
    profile = off_diagonal_profile(decomposition, None, [t], [20, 64], j_max=3)
    g = [profile.g[j] for j in (1, 2, 3)]
    assert g[0] > g[1] > g[2] > 0
    assert profile.skipped == []
    assert profile.weights == {1: 2.0, 2: 4.0, 3: 8.0}
    assert profile.weighted_sum == pytest.approx(profile.partial_sums[-1])
    assert profile.partial_sums == sorted(profile.partial_sums)
    assert 0 <= profile.saturation < 1
    assert profile.tail_slope is not None and profile.tail_slope < 0
    logger.info(f"heat profile g: {g}")


def test_profile_skips_empty_annuli(heat):
    space, decomposition = heat
    profile = off_diagonal_profile(decomposition, None, [4 / 128], [64], j_max=5)
    assert profile.g[5] == 0.0
    assert any(entry.startswith("j=5") for entry in profile.skipped)


def test_profile_reports_annuli_under_the_noise_floor(heat):
    space, decomposition = heat
    t = 1 / 128
    profile = off_diagonal_profile(
        decomposition, None, [t], [64], j_max=4, family=("delta",), noise_floor=1e-3
    )
    # e^{-|x-y|^2 / 4t} drops under 1e-3 before the ring at 2^3 t
    assert profile.skipped == []
    assert profile.g[1] > 0
    assert profile.g[4] == 0.0
    assert 4 in profile.below_noise_floor
    assert all(profile.g[j] == 0.0 for j in profile.below_noise_floor)
    assert 1 not in profile.below_noise_floor

    loose = off_diagonal_profile(
        decomposition, None, [t], [64], j_max=4, family=("delta",), noise_floor=0.0
    )
    assert loose.below_noise_floor == []


def test_linear_annuli_weights(heat):
    space, decomposition = heat
    profile = off_diagonal_profile(
        decomposition, None, [4 / 128], [64], j_max=4, annuli="linear", family=("indicator",)
    )
    assert profile.weights == {1: 1.0, 2: 2.0, 3: 3.0, 4: 4.0}
    with pytest.raises(VerificationError):
        off_diagonal_profile(decomposition, None, [4 / 128], [64], annuli="spiral")


def test_profile_of_custom_operator_family(heat):
    space, decomposition = heat
    profile = off_diagonal_profile(
        decomposition,
        None,
        [4 / 128],
        [64],
        j_max=3,
        operator_family=lambda t: np.eye(space.n_nodes),
    )
    # the identity never leaves B(x, t)
    assert profile.g[2] == 0.0 and profile.g[3] == 0.0
    assert profile.g[1] > 0


@pytest.mark.parametrize(
    "values, expected",
    [
        ([], 1.0),
        ([0.0, 0.0, 0.0], 1.0),
        ([1.0, 2.0, 3.0, 3.0], 1.5),
        ([2.0, 1.0, 1.0, 1.0], 1.0),
        ([0.0, 0.0, 1.0], math.inf),
    ],
)
def test_grid_stability(values, expected):
    assert grid_stability(values) == expected


def test_dm_condition_vanishes_for_exact_approximation():
    space = build_grid(1, 1.0, 64)
    I = identity(space)
    report = dm_condition(I, I, lambda t: identity(space), 1.0, [2 / 64, 4 / 64])
    assert report.W == 0.0
    assert report.W_operator == 0.0
    assert report.stability == 1.0


def test_dm_condition_shrinks_with_delta():
    space = build_grid(1, 1.0, 64)
    decomposition = eigendecompose(
        shift_identity(assemble_form_operator(space, make_field("identity")))
    )
    I = identity(space)
    t_grid = [2 / 64, 4 / 64]

    def family(t):
        return propagator(decomposition, t * t)

    near = dm_condition(I, I, family, 1.0, t_grid)
    far = dm_condition(I, I, family, 2.0, t_grid)
    assert 0 < far.W <= near.W
    assert near.W_operator >= 0
    assert len(near.kernel_values) == len(t_grid)
    with pytest.raises(VerificationError):
        dm_condition(I, I, family, 0.0, t_grid)

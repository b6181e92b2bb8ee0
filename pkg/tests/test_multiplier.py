"""
This module contains tests for multiplier presets, the dyadic partition of
unity and the C^s (Mihlin-type) norms.

To run the tests in this file individually, use the following command:
    pytest tests/test_multiplier.py
"""

import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.models.exceptions import MultiplierError
from app.services.multiplier import (
    HolderOrder,
    default_order,
    dyadic_partition,
    holder_norm,
    log_derivative_condition,
    make_multiplier,
    mihlin_sup,
    scale,
)

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)


@pytest.mark.parametrize(
    "preset, params, lam, expected",
    [
        ("constant", {"value": 3.0}, 7.0, 3.0),
        ("heat", {"t": 2.0}, 1.0, math.exp(-2.0)),
        ("imaginary_power", {"s_im": 1.0}, math.e, complex(math.cos(1), math.sin(1))),
        ("imaginary_power", {"s_im": 1.0}, 0.0, 1.0),
        ("schrodinger", {"alpha": 1.0, "t": 0.0}, 1.0, 0.5),
        ("wave", {"alpha": 2.0, "t": 0.0}, 3.0, 0.25),
        ("bochner_riesz", {"alpha": 1.0, "R": 4.0}, 2.0, 0.5),
        ("bochner_riesz", {"alpha": 1.0, "R": 4.0}, 5.0, 0.0),
        ("smooth_bump", {"lo": 1.0, "hi": 3.0}, 2.0, 1.0),
        ("smooth_bump", {"lo": 1.0, "hi": 3.0}, 3.5, 0.0),
    ],
)
def test_preset_closed_forms(preset, params, lam, expected):
    F = make_multiplier(preset, params)
    assert complex(F(np.array([lam]))[0]) == pytest.approx(complex(expected), abs=1e-12)


def test_multipliers_are_bounded_on_the_spectrum():
    lam = np.geomspace(1e-6, 1e6, 2001)
    for preset, params in [
        ("imaginary_power", {"s_im": 4.0}),
        ("schrodinger", {"alpha": 0.0, "t": 3.0}),
        ("wave", {"alpha": 1.0, "t": 3.0}),
        ("bochner_riesz", {"alpha": 1.1, "R": 64.0}),
    ]:
        values = np.abs(make_multiplier(preset, params)(lam))
        assert values.max() <= 1.0 + 1e-12, preset


@pytest.mark.parametrize(
    "preset, params",
    [
        ("heat", {"t": -1.0}),
        ("bochner_riesz", {"alpha": 1.0, "R": 0.0}),
        ("smooth_bump", {"lo": 2.0, "hi": 1.0}),
        ("dyadic_bump", {"scale": -1.0}),
        ("heat", {"time": 1.0}),
    ],
)
def test_bad_multiplier_parameters(preset, params):
    with pytest.raises(MultiplierError):
        make_multiplier(preset, params)


def test_scale_rescales_argument():
    F = make_multiplier("heat", {"t": 1.0})
    G = scale(F, 2.0)
    assert G(np.array([1.5]))[0] == pytest.approx(F(np.array([3.0]))[0])
    with pytest.raises(MultiplierError):
        scale(F, 0.0)


def test_partition_of_unity():
    partition = dyadic_partition()
    lam = np.geomspace(2.0**-20, 2.0**20, 4001)
    assert np.allclose(partition.partition_sum(lam), 1.0, atol=1e-12)
    assert partition.phi(np.array([0.2, 1.1])).tolist() == [0.0, 0.0]
    assert np.all(partition.phi(lam) >= 0)


def test_sharper_partition_still_sums_to_one():
    partition = dyadic_partition(step_sharpness=4.0)
    lam = np.geomspace(1e-3, 1e3, 1001)
    assert np.allclose(partition.partition_sum(lam), 1.0, atol=1e-12)
    with pytest.raises(MultiplierError):
        dyadic_partition(step_sharpness=0.5)


def test_holder_order_rejects_integers():
    with pytest.raises(MultiplierError):
        HolderOrder(1.0)
    with pytest.raises(MultiplierError):
        HolderOrder(-0.5)
    assert HolderOrder(1.51).integer_part == 1
    assert default_order(1) == pytest.approx(1.01)
    assert default_order(2) == pytest.approx(1.51)


def test_holder_norm_of_simple_functions():
    x = np.linspace(0.0, 1.0, 513)
    assert holder_norm(np.full(x.size, -2.0), 0.0, 1.0, 0.5) == pytest.approx(2.0)
    assert holder_norm(x, 0.0, 1.0, 1.5) == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(MultiplierError):
        holder_norm(x[:5], 0.0, 1.0, 2.5)


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(min_value=-3, max_value=3, allow_nan=False),
    b=st.floats(min_value=-3, max_value=3, allow_nan=False),
)
def test_holder_norm_is_subadditive(a, b):
    x = np.linspace(0.0, 1.0, 257)
    f, g = np.sin(3 * x), x**2
    lhs = holder_norm(a * f + b * g, 0.0, 1.0, 0.5)
    rhs = holder_norm(a * f, 0.0, 1.0, 0.5) + holder_norm(b * g, 0.0, 1.0, 0.5)
    assert lhs <= rhs * (1 + 1e-9) + 1e-12


def test_mihlin_sup_for_smooth_multipliers():
    partition = dyadic_partition()
    scales = [2.0**k for k in range(-6, 7)]
    constant = mihlin_sup(make_multiplier("constant"), partition, 1.01, scales)
    assert not constant.edge_growth
    assert len(constant.table) == len(scales)
    values = [v for _, v in constant.table]
    assert max(values) == pytest.approx(min(values))

    imaginary = mihlin_sup(make_multiplier("imaginary_power", {"s_im": 1.0}), partition, 1.01, scales)
    assert np.isfinite(imaginary.value)
    with pytest.raises(MultiplierError):
        mihlin_sup(make_multiplier("constant"), partition, 1.01, [])


def test_log_derivative_condition():
    sups = log_derivative_condition(make_multiplier("constant", {"value": 2.0}), 2)
    assert sups[0] == pytest.approx(2.0)
    assert sups[1] == pytest.approx(0.0, abs=1e-9)
    assert len(sups) == 3

    power = log_derivative_condition(make_multiplier("imaginary_power", {"s_im": 2.0}), 1)
    # (lambda d/dlambda) lambda^{2i} = 2i lambda^{2i}
    assert power[1] == pytest.approx(2.0, rel=1e-3)

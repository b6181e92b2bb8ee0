"""
This module contains the acceptance-scale checks (N >= 256). They are marked
slow and skipped by default.

To run the tests in this file, use the following command:
    pytest -m slow tests/test_acceptance.py
"""

import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from app.models.media import make_cutoff, make_field
from app.models.operators import DiscreteOperator
from app.models.space import build_grid
from app.schemas.experiments import ExperimentKind, load_config, parse_config
from app.schemas.report import Status
from app.services.assemble import assemble_form_operator, shift_identity
from app.services.czkit import cz_decompose
from app.services.experiments import RunContext, run_experiment
from app.services.runner import run_experiments
from app.services.spectral import (
    SubordinationParams,
    eigendecompose,
    inv_sqrt,
    inv_sqrt_subordination,
    propagator,
    required_panels,
)
from app.services.verify.kernels import gaussian_fit, heat_kernel_deviation, kernel_of, riesz_l2_check
from app.utils.results_log import ResultLogger

# Set up logging configuration
logger = logging.getLogger()
logger.setLevel(logging.INFO)
console_handler = logging.StreamHandler()
logger.addHandler(console_handler)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

pytestmark = pytest.mark.slow


def test_free_kernel_at_512_nodes():
    space = build_grid(1, 1.0, 512)
    decomposition = eigendecompose(assemble_form_operator(space, make_field("identity")))
    h = space.spacing[0]
    t0 = 25 * h * h
    kernel = kernel_of(propagator(decomposition, t0))
    deviation = heat_kernel_deviation(kernel, t0)
    logger.info(f"N=512 heat kernel deviation {deviation:.3e}")
    assert deviation <= 0.05

    t_grid = list(np.geomspace(*space.time_window, 6))
    kernels = [kernel_of(propagator(decomposition, t)) for t in t_grid]
    fit = gaussian_fit(kernels, t_grid, with_growth_factor=True, c_grid=[1 / 16, 1 / 8, 0.3, 0.5])
    eighth = fit.constants[fit.c_grid.index(0.125)]
    assert np.isfinite(eighth)
    assert fit.constants[-1] > 100 * eighth


def test_riesz_l2_bound_on_plateau():
    space = build_grid(1, 1.0, 512)
    field = make_field("plateau_bump", {"center": 0.5, "radius": 0.3, "width": 0.15})
    cutoff = make_cutoff("plateau", {"center": 0.5, "inner": 0.15, "outer": 0.3}, space)
    decomposition = eigendecompose(shift_identity(assemble_form_operator(space, field)))
    report = riesz_l2_check(decomposition, field, cutoff, mu=1.0)
    assert report.passed
    assert max(report.norms) <= report.bound * (1 + 1e-8)


@pytest.mark.parametrize("trial", range(20))
def test_subordination_on_random_matrices(trial):
    n = [16, 32, 64, 128, 256][trial % 5]
    rng = np.random.default_rng(100 + trial)
    B = rng.standard_normal((n, n))
    space = build_grid(1, 1.0, n)
    H = DiscreteOperator(space=space, tag="R", matrix=B @ B.T / n + np.eye(n), epsilon=1.0)
    decomposition = eigendecompose(H)
    params = SubordinationParams(tolerance=1e-6)
    params = replace(params, panels=required_panels(decomposition, params))
    approx = inv_sqrt_subordination(decomposition, params).dense()
    exact = inv_sqrt(decomposition).dense()
    assert np.abs(approx - exact).max() / np.abs(exact).max() <= 1e-6


@pytest.mark.parametrize("dim, N", [(1, 256), (2, 16)])
def test_cz_invariants_on_random_inputs(dim, N):
    space = build_grid(dim, 1.0, N)
    rng = np.random.default_rng(dim)
    for _ in range(100):
        f = rng.exponential(size=space.n_nodes) * (rng.random(space.n_nodes) < 0.3)
        f[rng.integers(0, space.n_nodes, size=4)] += rng.uniform(10, 100, size=4)
        mean = float(np.sum(f * space.node_measure)) / space.total_measure
        decomposition = cz_decompose(space, f, mean * rng.uniform(1.5, 20.0))
        checks = decomposition.check_invariants(f)
        assert all(checks.values()), checks


@pytest.mark.asyncio
async def test_full_suite_is_deterministic(tmp_path):
    config = load_config(CONFIG_DIR / "full.json")
    await run_experiments(config, output_dir=tmp_path / "a", workers=1)
    await run_experiments(config, output_dir=tmp_path / "b", workers=4)
    first = sorted((tmp_path / "a" / "tables").glob("*.csv"))
    assert first
    for path in first:
        assert path.read_bytes() == (tmp_path / "b" / "tables" / path.name).read_bytes()


def _plateau(N: int, experiments: list[dict]) -> dict:
    data = json.loads((CONFIG_DIR / "plateau.json").read_text(encoding="utf-8"))
    data["space"]["N"] = N
    data["experiments"] = experiments
    return data


def _run(config, *kinds: ExperimentKind) -> list[ResultLogger]:
    ctx = RunContext.from_config(config)
    logs = []
    for plan in config.plans:
        if kinds and plan.kind not in kinds:
            continue
        log = ResultLogger(experiment=f"{plan.index:02d}_{plan.kind.value}")
        run_experiment(ctx, plan.kind, plan.params, log)
        logs.append(log)
    assert logs
    return logs


def _assert_passed(logs: list[ResultLogger], *names: str) -> None:
    checks = [check for log in logs for check in log.checks()]
    failed = [(c.name, c.value, c.reference) for c in checks if c.status is Status.FAIL]
    assert not failed, failed
    for name in names:
        matching = [c for c in checks if c.name == name]
        assert matching, f"no {name} check"
        assert all(c.status is Status.PASS for c in matching), matching


def test_assembly_matches_closed_form_at_256_nodes():
    config = parse_config(
        {"schema_version": "1", "space": {"N": 256}, "experiments": [{"kind": "assembly"}]}
    )
    _assert_passed(_run(config), "closed_form_spectrum", "mu_self_adjoint")


def test_neumann_indicator_growth():
    config = load_config(CONFIG_DIR / "neumann.json")
    logs = _run(config, ExperimentKind.GAUSSIAN)
    _assert_passed(logs, "C_ref_stable_when_t_max_doubles", "growth_slope_no_factor")
    slope = logs[0].constants["growth_slope_no_factor"]
    logger.info(f"Neumann no-factor growth slope {slope:.3f}")
    assert abs(slope - 0.5) <= 0.2


def test_full_suite_gaussian_is_stable():
    config = load_config(CONFIG_DIR / "full.json")
    _assert_passed(_run(config, ExperimentKind.GAUSSIAN), "C_ref_stable_when_t_max_doubles")


def test_off_diagonal_profile_on_plateau_at_512_nodes():
    config = parse_config(_plateau(512, [{"kind": "offdiag", "params": {"q0": 2.0, "j_max": 8}}]))
    logs = _run(config)
    _assert_passed(logs, "g_decreasing_from_j2", "weighted_sum_saturates")
    assert logs[0].constants["annuli_below_noise_floor"] is not None


def test_dm_and_oscillation_on_plateau():
    config = load_config(CONFIG_DIR / "plateau.json")
    logs = _run(config, ExperimentKind.DM, ExperimentKind.MULTIPLIER_OSC)
    assert len(logs) == 4
    _assert_passed(logs, "W_stable_across_t", "row_sums_stable_across_t")


def test_weak11_riesz_refinements_on_plateau():
    config = load_config(CONFIG_DIR / "plateau.json")
    logs = _run(config, ExperimentKind.WEAK11)
    _assert_passed(logs, "column_l1_grows", "weak11_refinement_change")
    refinements = [row.params["N"] for row in logs[0].rows if row.value_name == "column_l1"]
    assert refinements == [256, 512, 1024]
    assert not [row for row in logs[0].rows if row.value_name == "refinement_above_max_nodes"]


def test_theorem1_held_out_instances_at_512_nodes():
    config = parse_config(_plateau(512, [{"kind": "theorem1"}]))
    logs = _run(config)
    _assert_passed(logs, "held_out_within_slack")
    assert logs[0].constants["C_fit"] > 0


def test_imaginary_power_growth_on_plateau():
    config = load_config(CONFIG_DIR / "plateau.json")
    _assert_passed(_run(config, ExperimentKind.IMAGINARY_POWERS), "growth_below_envelope")

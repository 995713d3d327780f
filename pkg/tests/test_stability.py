import numpy as np
import orjson
import pytest

from best_response import estimate_moduli
from divergences import PerturbationSpec
from errors import AssumptionViolation
from expectation import QuadratureRule
from game_model import BoxSpace, FGMDensity, GridTabulatedDensity, ProductUniformDensity
from stability import (
    SolverSettings,
    check_admissibility,
    check_marginals,
    kl_bound,
    run_sensitivity_sweep,
    run_stability,
    solve_many,
)
from utils import dumps_report

UNIT = [BoxSpace([0.0], [1.0]), BoxSpace([0.0], [1.0])]


@pytest.fixture
def settings():
    return SolverSettings(rule=QuadratureRule(nodes_per_axis=16), node_counts=21, cells=41)


def fgm(rho):
    return FGMDensity(UNIT, rho)


@pytest.mark.parametrize("rho1, rho2", [(0.0, 0.3), (0.3, 0.31), (-0.5, 0.6)])
def test_drift_respects_bounds(game2, settings, rho1, rho2):
    report = run_stability(game2, PerturbationSpec(fgm(rho1), fgm(rho2)), settings)
    assert report.certified
    assert report.checks["w1_bound"]
    assert report.checks["kl_bound"]
    assert report.checks["closed_form_bound"]
    assert report.passed
    assert report.drift_inf <= report.example_bound["uniform_bound"] + 1e-6
    assert "bounds not guaranteed" not in report.notes


def test_report_serializes(game2, settings):
    report = run_stability(game2, PerturbationSpec(fgm(0.0), fgm(0.3)), settings)
    body = orjson.loads(dumps_report(report))
    assert body["passed"] is True
    assert body["admissibility"]["verdict"] is True
    assert len(body["solves"]) == 2
    assert body["slack_42"] >= 1.0


def test_identical_laws_do_not_move(game2, settings):
    report = run_stability(game2, PerturbationSpec(fgm(0.3), fgm(0.3)), settings)
    assert report.drift_inf <= 1e-9
    assert report.bound_42 == pytest.approx(0.0, abs=1e-12)


def test_solve_many_keeps_input_order(game2, game3, settings):
    games = [game2, game3]
    results = solve_many(games, [estimate_moduli(g) for g in games], settings)
    assert [r.profile.n for r in results] == [2, 3]


@pytest.mark.slow
def test_sensitivity_sweep(game2, settings):
    report = run_sensitivity_sweep(game2, fgm(0.0), fgm(0.6), [0.4, 0.2, 0.1, 0.05], settings)
    assert report.checks["w1_linearity"]
    assert report.checks["ratio_stable"]
    assert report.checks["sensitivity_bound"]
    frame = report.sweep_frame()
    assert list(frame["epsilon"]) == [0.4, 0.2, 0.1, 0.05]
    assert np.all(frame["drift_over_eps"] <= report.bound_45 * 1.001)


@pytest.mark.parametrize("eps_list", [[0.1, 0.2], [0.6, 0.1], [], [0.2, 0.2], [0.1, 0.0]])
def test_sweep_rejects_bad_eps_lists(game2, settings, eps_list):
    with pytest.raises(ValueError):
        run_sensitivity_sweep(game2, fgm(0.0), fgm(0.6), eps_list, settings)


def test_marginals_must_agree(game2):
    lopsided = GridTabulatedDensity(UNIT, [[0.0, 1.0], [0.0, 1.0]], [[1.0, 1.0], [3.0, 3.0]])
    with pytest.raises(AssumptionViolation):
        check_marginals(game2, ProductUniformDensity(UNIT), lopsided)
    assert check_marginals(game2, fgm(0.0), fgm(0.6)) <= 1e-9


def test_zero_density_is_not_admissible(game2):
    holed = GridTabulatedDensity(UNIT, [[0.0, 0.5, 1.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    spec = PerturbationSpec(ProductUniformDensity(UNIT), holed)
    report = check_admissibility(game2, spec, cells=21)
    assert not report.verdict
    assert report.to_dict()["C"] == ["inf", "inf"]
    assert spec.admissibility is report


@pytest.mark.parametrize("kwargs", [{"eps_target": 0.0}, {"max_iter": 0}])
def test_settings_validation(kwargs):
    with pytest.raises(ValueError):
        SolverSettings(**kwargs)


def test_fgm_perturbation_has_finite_constants(game2):
    report = check_admissibility(game2, PerturbationSpec(fgm(0.0), fgm(0.6)), cells=41)
    assert report.verdict
    assert all(np.isfinite(c) and 1.0 <= c <= 16.0 for c in report.constants)


def test_kl_bound_takes_the_smaller_order(game2):
    moduli = estimate_moduli(game2)
    # K = 7/6 and Diam(Θ_{-i}) = 1; only the smaller KL enters
    expected = 7.0 / 6.0 * np.sqrt(0.02 / 2)
    assert kl_bound(game2, moduli, 0.08, 0.02) == pytest.approx(expected)
    assert kl_bound(game2, moduli, 0.02, 0.08) == pytest.approx(expected)

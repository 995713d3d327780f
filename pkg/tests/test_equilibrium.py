import numpy as np
import pytest

from best_response import estimate_moduli
from cournot import closed_form_equilibrium, complements_game
from equilibrium import (
    Direction,
    SolveMethod,
    apply_psi,
    banach_iteration_bound,
    brute_force_equilibrium,
    check_order_conditions,
    equilibrium_lipschitz,
    fixed_point_residual,
    monotone_in_type,
    restrict_to_nodes,
    solve_contraction,
    solve_monotone,
)
from errors import ConvergenceError, OrderConditionError, ShapeError
from expectation import QuadratureRule
from game_model import BoxSpace, GameSpec, PlayerSpec, ProductUniformDensity, QuadraticUtility
from strategy_space import StrategyProfile


class TestContraction:
    def test_cournot2_matches_closed_form(self, game2, rule):
        result = solve_contraction(game2, rule, eps_target=1e-8, node_counts=21)
        assert result.method == SolveMethod.CONTRACTION
        assert result.certified
        assert result.certificate <= 1e-8
        for i in range(2):
            nodes = result.profile[i].nodes[:, 0]
            np.testing.assert_allclose(result.node_values(i)[:, 0], closed_form_equilibrium(nodes), atol=1e-6)

    @pytest.mark.slow
    def test_cournot2_closed_form_at_full_resolution(self, game2):
        result = solve_contraction(game2, QuadratureRule(nodes_per_axis=32), node_counts=101)
        nodes = result.profile[0].nodes[:, 0]
        assert np.max(np.abs(result.node_values(0)[:, 0] - closed_form_equilibrium(nodes))) <= 1e-3

    def test_cournot3_rate_and_iteration_bound(self, game3, rule):
        moduli = estimate_moduli(game3)
        eps = 1e-8
        result = solve_contraction(game3, rule, eps_target=eps, moduli=moduli, node_counts=11)
        alpha = moduli.alpha
        ratios = [b / a for a, b in zip(result.trace, result.trace[1:]) if a > 1e-13]
        assert all(r <= alpha + 0.05 for r in ratios[3:])
        threshold = eps * (1 - alpha) / alpha
        assert result.iterations <= banach_iteration_bound(result.trace[0], threshold, alpha)
        assert fixed_point_residual(game3, result.profile, np.inf, rule) <= eps

    @pytest.mark.parametrize("start", ["top", "bottom", "midpoint"])
    def test_start_does_not_matter(self, game2, rule, start):
        reference = solve_contraction(game2, rule, eps_target=1e-9, node_counts=11)
        result = solve_contraction(game2, rule, eps_target=1e-9, node_counts=11, start=start)
        assert result.profile.max_node_change(reference.profile) <= 2e-9

    @pytest.mark.parametrize("p", [1, 2])
    def test_integral_norms_converge(self, game2, rule, p):
        result = solve_contraction(game2, rule, p=p, eps_target=1e-7, node_counts=11)
        assert result.p == p
        assert result.certificate <= 1e-7

    def test_iteration_cap(self, game2, rule):
        with pytest.raises(ConvergenceError) as info:
            solve_contraction(game2, rule, eps_target=1e-12, max_iter=1, node_counts=11)
        assert len(info.value.trace) == 1

    def test_eps_must_be_positive(self, game2):
        with pytest.raises(ValueError):
            solve_contraction(game2, eps_target=0.0)

    def test_unknown_start(self, game2, rule):
        with pytest.raises(ValueError):
            solve_contraction(game2, rule, start="sideways", node_counts=5)

    def test_equilibrium_slope(self, game2, rule):
        result = solve_contraction(game2, rule, eps_target=1e-10, node_counts=11)
        # |df*/dθ| = 1 / (2β + c + βρ/3)
        assert equilibrium_lipschitz(result.profile)[0] == pytest.approx(1 / 3.1, rel=1e-6)

    @pytest.mark.parametrize("residual, eps, alpha, expected", [(1.0, 1e-6, 0.5, 22), (1e-7, 1e-6, 0.5, 2)])
    def test_banach_bound(self, residual, eps, alpha, expected):
        assert banach_iteration_bound(residual, eps, alpha) == expected

    def test_psi_is_a_fixed_point_map(self, game2, rule):
        result = solve_contraction(game2, rule, eps_target=1e-10, node_counts=11)
        image = apply_psi(game2, result.profile, rule)
        assert image.max_node_change(result.profile) <= 1e-9

    def test_psi_contracts_at_rate_alpha(self, game2, rule):
        alpha = estimate_moduli(game2).alpha
        rng = np.random.default_rng(5)
        f = StrategyProfile.midpoint(game2, node_counts=11)
        g = StrategyProfile(tuple(grid.with_values(rng.uniform(0.0, 10.0, size=grid.values.shape))
                                  for grid in f.grids))
        distances = [f.max_node_change(g)]
        for _ in range(2):
            f, g = apply_psi(game2, f, rule), apply_psi(game2, g, rule)
            distances.append(f.max_node_change(g))
        assert distances[1] <= (alpha + 0.05) * distances[0]
        assert distances[2] <= (alpha + 0.05) * distances[1]

    @pytest.mark.parametrize("p", [1, 2, np.inf])
    def test_residual_at_stop_within_twice_eps(self, game2, rule, p):
        eps = 1e-6
        result = solve_contraction(game2, rule, p=p, eps_target=eps, node_counts=11)
        assert fixed_point_residual(game2, result.profile, p, rule) <= 2 * eps


class TestOrderConditions:
    def test_complements_pass(self, complements):
        report = check_order_conditions(complements, samples=200)
        assert report.passed
        assert report.type_direction == "increasing"
        assert all(r.supermodular.trivial for r in report.players)

    def test_cournot_fails_directly_with_witness(self, game2):
        report = check_order_conditions(game2, samples=200, allow_reversal=False)
        assert not report.passed
        assert report.type_direction == "decreasing"
        witness = report.players[0].rival_differences.witness
        assert witness["gradient_change"] < 0
        assert report.to_dict()["evidence"] == "sampled evidence"

    def test_cournot2_passes_with_player_one_reversed(self, game2):
        report = check_order_conditions(game2, samples=200)
        assert not report.direct
        assert report.passed
        assert report.reversed_players == [1]
        body = report.to_dict()
        assert body["direct_order_passed"] is False
        assert body["reversed_order"]["passed"] is True

    def test_cournot3_has_no_reversal(self, game3):
        report = check_order_conditions(game3, samples=200)
        assert not report.passed
        assert report.reversed_players == []

    def test_cournot_monotone_needs_override_without_reversal(self, game2, rule):
        with pytest.raises(OrderConditionError):
            solve_monotone(game2, rule, node_counts=5, allow_reversal=False)

    def test_cournot_trajectory_breaks_order(self, game2, rule):
        # substitutes: from the top, responses jump back up on the second step
        with pytest.raises(OrderConditionError):
            solve_monotone(game2, rule, Direction.FROM_TOP, override=True, node_counts=5, allow_reversal=False)

    @pytest.mark.parametrize("cross, passes", [(0.5, True), (-0.5, False)])
    def test_vector_action_supermodularity(self, rule, cross, passes):
        box = BoxSpace([0.0], [1.0])
        actions = BoxSpace([0.0, 0.0], [1.0, 1.0])
        H = [[-2.0, cross], [cross, -2.0]]
        game = GameSpec(
            players=(PlayerSpec(box, actions), PlayerSpec(box, actions)),
            utility=QuadraticUtility(H=[H, H], b=[[1.0, 1.0], [1.0, 1.0]],
                                     C=[{1: 0.1 * np.eye(2)}, {0: 0.1 * np.eye(2)}],
                                     action_dims=[2, 2], type_dims=[1, 1]),
            density=ProductUniformDensity([box, box]),
        )
        report = check_order_conditions(game, samples=200)
        assert report.passed is passes
        assert all(r.supermodular.passed is passes for r in report.players)
        if not passes:
            assert report.players[0].supermodular.witness["cross_partial"] == pytest.approx(cross, abs=1e-6)


class TestMonotone:
    @pytest.mark.parametrize("direction", [Direction.FROM_TOP, Direction.FROM_BOTTOM])
    def test_limits_agree_with_contraction(self, complements, rule, direction):
        tol = 1e-8
        contraction = solve_contraction(complements, rule, eps_target=tol, node_counts=11)
        monotone = solve_monotone(complements, rule, direction, tol=tol, node_counts=11)
        assert monotone.profile.max_node_change(contraction.profile) <= 3 * tol
        assert monotone_in_type(monotone) == [True, True]
        assert monotone.type_direction == "increasing"

    def test_trajectory_is_ordered(self, complements, rule):
        result = solve_monotone(complements, rule, "bottom", tol=1e-6, node_counts=7)
        assert result.method == SolveMethod.MONOTONE_FROM_BOTTOM
        assert all(change >= 0 for change in result.trace)

    def test_tol_must_be_positive(self, complements):
        with pytest.raises(ValueError):
            solve_monotone(complements, tol=0.0)

    @pytest.mark.parametrize("direction", [Direction.FROM_TOP, Direction.FROM_BOTTOM])
    def test_cournot2_solves_with_reversed_order(self, game2, rule, direction):
        tol = 1e-8
        contraction = solve_contraction(game2, rule, eps_target=tol, node_counts=11)
        monotone = solve_monotone(game2, rule, direction, tol=tol, node_counts=11)
        assert monotone.reversed_players == [1]
        assert monotone.to_dict()["reversed_players"] == [1]
        assert monotone.profile.max_node_change(contraction.profile) <= 3 * tol
        assert monotone.type_direction == "decreasing"
        assert monotone_in_type(monotone) == [True, True]

    def test_reversal_is_an_involution(self, game2, rule):
        profile = solve_contraction(game2, rule, eps_target=1e-6, node_counts=5).profile
        twice = profile.reversed_actions(1).reversed_actions(1)
        assert twice.max_node_change(profile) <= 1e-12
        # optimal responses commute with the reversal
        flipped = game2.reversed_actions(1)
        direct = apply_psi(game2, profile, rule)
        through = apply_psi(flipped, profile.reversed_actions(1), rule).reversed_actions(1)
        assert through.max_node_change(direct) <= 1e-9


class TestBruteForce:
    def test_agrees_with_contraction(self, game2, rule):
        oracle = brute_force_equilibrium(game2, type_nodes=5, action_points=201, rule=rule)
        solved = solve_contraction(game2, rule, eps_target=1e-8, node_counts=21)
        nodes = [oracle.profile[i].nodes for i in range(2)]
        for i, values in enumerate(restrict_to_nodes(solved, nodes)):
            np.testing.assert_allclose(oracle.node_values(i), values, atol=1e-3)

    def test_complements_oracle(self, rule):
        game = complements_game(n=2)
        oracle = brute_force_equilibrium(game, type_nodes=5, rule=rule)
        solved = solve_contraction(game, rule, eps_target=1e-8, node_counts=21)
        for i, values in enumerate(restrict_to_nodes(solved, [oracle.profile[i].nodes for i in range(2)])):
            np.testing.assert_allclose(oracle.node_values(i), values, atol=1e-3)

    def test_vector_actions_rejected(self):
        box = BoxSpace([0.0], [1.0])
        game = GameSpec(
            players=(PlayerSpec(box, BoxSpace([0.0, 0.0], [1.0, 1.0])),),
            utility=QuadraticUtility(H=[-2.0 * np.eye(2)], b=[[0.5, 0.5]], action_dims=[2], type_dims=[1]),
            density=ProductUniformDensity([box]),
        )
        with pytest.raises(ShapeError):
            brute_force_equilibrium(game)


def test_single_player_game_solves_pointwise(rule):
    box = BoxSpace([0.0], [1.0])
    game = GameSpec(
        players=(PlayerSpec(box, BoxSpace([0.0, 0.0], [1.0, 1.0])),),
        utility=QuadraticUtility(H=[-2.0 * np.eye(2)], b=[[0.5, 0.25]], D=[[[1.0], [0.0]]], action_dims=[2],
                                 type_dims=[1]),
        density=ProductUniformDensity([box]),
    )
    result = solve_contraction(game, rule, eps_target=1e-10, node_counts=5)
    nodes = result.profile[0].nodes[:, 0]
    # maximizer of −|a|² + a·(b + Dθ) is (b + Dθ)/2, clipped
    expected = np.stack([np.clip((0.5 + nodes) / 2, 0, 1), np.full_like(nodes, 0.125)], axis=-1)
    np.testing.assert_allclose(result.node_values(0), expected, atol=1e-12)
    assert isinstance(result.profile, StrategyProfile)

import numpy as np
import pytest
from scipy.integrate import quad

from cournot import cournot2, cournot3
from errors import ConditioningError, ConfigError, DomainError, ShapeError
from expectation import QuadratureRule
from game_model import (
    BoxSpace,
    CournotUtility,
    FGMDensity,
    GameSpec,
    GridTabulatedDensity,
    MixtureDensity,
    PlayerSpec,
    ProductUniformDensity,
    QuadraticUtility,
    ReversedUtility,
    conditional_density,
    evaluate_grad,
    evaluate_utility,
    gradient_check,
    monotonicity_quotients,
    sample_profiles,
)

from conftest import make_random_quadratic

UNIT = [BoxSpace([0.0], [1.0]), BoxSpace([0.0], [1.0])]


class TestBoxSpace:
    def test_diameter_and_volume(self):
        box = BoxSpace([0.0, 0.0], [3.0, 4.0])
        assert box.diameter() == pytest.approx(5.0)
        assert box.volume() == pytest.approx(12.0)
        np.testing.assert_allclose(box.midpoint(), [1.5, 2.0])

    @pytest.mark.parametrize("lower, upper", [([0.0], [0.0]), ([1.0], [0.5]), ([0.0, 1.0], [1.0, 1.0])])
    def test_degenerate_box_rejected(self, lower, upper):
        with pytest.raises(ConfigError):
            BoxSpace(lower, upper)

    def test_check_names_violating_coordinate(self):
        box = BoxSpace([0.0, 0.0], [1.0, 1.0])
        with pytest.raises(DomainError) as info:
            box.check([0.5, 1.5])
        assert info.value.coordinate == 1
        assert info.value.value == pytest.approx(1.5)

    def test_check_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            BoxSpace([0.0], [1.0]).check([0.1, 0.2])

    def test_lattice_corners(self):
        box = BoxSpace([-1.0, 2.0], [1.0, 3.0])
        np.testing.assert_array_equal(box.top(), [1.0, 3.0])
        np.testing.assert_array_equal(box.bottom(), [-1.0, 2.0])


class TestUtilities:
    def test_cournot_value_matches_profit(self, game2):
        a, theta = [2.0, 3.0], [0.25, 0.75]
        expected = 2.0 * (10.0 - 1.0 * 5.0) - 0.25 * 2.0 - 0.5 * 4.0
        assert evaluate_utility(game2, 0, a, theta) == pytest.approx(expected)

    def test_cournot_gradient_closed_form(self, game2):
        # (α − θ_i) − (2β + c) a_i − β a_j
        grad = evaluate_grad(game2, 0, [2.0, 3.0], [0.25, 0.75])
        np.testing.assert_allclose(grad, [10.0 - 0.25 - 3.0 * 2.0 - 3.0])

    def test_out_of_box_action_rejected(self, game2):
        with pytest.raises(DomainError):
            evaluate_utility(game2, 0, [11.0, 1.0], [0.5, 0.5])

    @pytest.mark.parametrize("builder", [lambda: cournot2(), lambda: cournot2(rho=-0.5), make_random_quadratic])
    def test_gradient_matches_finite_differences(self, builder):
        report = gradient_check(builder(), np.random.default_rng(11), samples=1000, rtol=1e-6)
        assert report["passed"], report

    def test_cournot_is_strongly_monotone(self, game2):
        quotients = monotonicity_quotients(game2, 0, np.random.default_rng(0), samples=500)
        np.testing.assert_allclose(quotients, -3.0)

    def test_cournot_needs_positive_cost(self):
        with pytest.raises(ConfigError):
            CournotUtility(10.0, 1.0, 0.0, n=2)

    @pytest.mark.parametrize("game, i, a, theta, expected", [
        (cournot2(), 0, [2.0, 3.0], [0.5, 0.5], 7.0),
        (cournot3(), 1, [1.0, 1.0, 1.0], [0.0, 0.0, 0.0], 6.5),
    ])
    def test_golden_utilities(self, game, i, a, theta, expected):
        assert evaluate_utility(game, i, a, theta) == pytest.approx(expected, abs=1e-12)

    def test_golden_cournot3_gradient(self, game3):
        np.testing.assert_allclose(evaluate_grad(game3, 0, [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]), [5.0], atol=1e-12)


class TestDensities:
    @pytest.mark.parametrize("rho", [1.0, 1.5, -1.0])
    def test_fgm_rejects_closed_interval(self, rho):
        with pytest.raises(ConfigError) as info:
            FGMDensity(UNIT, rho)
        assert "density.rho" in info.value.paths

    def test_fgm_accepts_values_near_the_boundary(self):
        assert FGMDensity(UNIT, 0.9999).rho == 0.9999

    @pytest.mark.parametrize("rho", [-0.5, 0.0, 0.3, 0.9])
    def test_fgm_integrates_to_one(self, rho):
        density = FGMDensity(UNIT, rho)
        nodes, weights = QuadratureRule(nodes_per_axis=8).on_box(density.support)
        assert float(np.sum(weights * density.joint(nodes))) == pytest.approx(1.0, abs=1e-12)

    def test_fgm_marginals_are_uniform(self):
        density = FGMDensity(UNIT, 0.7)
        theta = np.linspace(0, 1, 7)[:, None]
        np.testing.assert_allclose(density.marginal(0, theta), 1.0)
        np.testing.assert_allclose(density.marginal(1, theta), 1.0)

    def test_fgm_conditional_point_value(self, game2):
        # q(θ_j | θ_i) = 1 + ρ(2θ_i − 1)(2θ_j − 1)
        assert conditional_density(game2, 0, [0.9], [0.1]) == pytest.approx(1.0 + 0.3 * 0.8 * -0.8)

    def test_fgm_conditional_lipschitz(self):
        assert FGMDensity(UNIT, 0.3).conditional_lipschitz(0) == pytest.approx(0.6)

    def test_tabulated_is_renormalized(self):
        density = GridTabulatedDensity(UNIT, [[0.0, 1.0], [0.0, 1.0]], [[2.0, 2.0], [6.0, 6.0]])
        nodes, weights = QuadratureRule(nodes_per_axis=4).on_box(density.support)
        assert float(np.sum(weights * density.joint(nodes))) == pytest.approx(1.0)
        # own marginal of player 0 is linear: 0.5 at 0, 1.5 at 1
        np.testing.assert_allclose(density.marginal(0, np.array([[0.0], [1.0]])), [0.5, 1.5])

    def test_tabulated_axis_must_span_box(self):
        with pytest.raises(ConfigError):
            GridTabulatedDensity(UNIT, [[0.0, 0.5], [0.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]])

    def test_tabulated_zero_marginal_cannot_condition(self):
        density = GridTabulatedDensity(UNIT, [[0.0, 0.5, 1.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        players = tuple(PlayerSpec(b, BoxSpace([0.0], [1.0])) for b in UNIT)
        game = GameSpec(players=players, utility=CournotUtility(1.0, 1.0, 1.0, n=2), density=density)
        with pytest.raises(ConditioningError):
            conditional_density(game, 0, [0.25], [0.5])

    @pytest.mark.parametrize("density", [
        ProductUniformDensity(UNIT),
        GridTabulatedDensity(UNIT, [[0.0, 0.4, 1.0], [0.0, 0.5, 1.0]],
                             [[1.0, 2.0, 0.5], [3.0, 1.0, 2.0], [0.2, 1.5, 1.0]]),
    ])
    @pytest.mark.parametrize("theta_i", [0.0, 0.3, 0.75, 1.0])
    def test_conditional_density_integrates_to_one(self, density, theta_i):
        players = tuple(PlayerSpec(b, BoxSpace([0.0], [1.0])) for b in UNIT)
        game = GameSpec(players=players, utility=CournotUtility(1.0, 1.0, 1.0, n=2), density=density)
        for i in range(2):
            mass, _ = quad(lambda t: conditional_density(game, i, [theta_i], [t]), 0.0, 1.0, points=[0.4, 0.5])
            assert mass == pytest.approx(1.0, abs=1e-8)

    def test_mixture_of_fgm_is_fgm(self):
        mix = MixtureDensity(FGMDensity(UNIT, 0.0), FGMDensity(UNIT, 0.6), 0.25)
        ref = FGMDensity(UNIT, 0.15)
        theta = np.random.default_rng(0).uniform(size=(50, 2))
        np.testing.assert_allclose(mix.joint(theta), ref.joint(theta))
        assert mix.conditional_lipschitz(1) == pytest.approx(ref.conditional_lipschitz(1))

    def test_mixture_weight_bounds(self):
        with pytest.raises(ConfigError):
            MixtureDensity(ProductUniformDensity(UNIT), FGMDensity(UNIT, 0.2), 1.5)


class TestGameSpec:
    def test_density_boxes_must_match_players(self):
        players = tuple(PlayerSpec(BoxSpace([0.0], [2.0]), BoxSpace([0.0], [1.0])) for _ in range(2))
        with pytest.raises(ConfigError):
            GameSpec(players=players, utility=CournotUtility(1.0, 1.0, 1.0, n=2), density=ProductUniformDensity(UNIT))

    def test_with_density_keeps_players(self, game2):
        other = game2.with_density(FGMDensity(UNIT, -0.2), name="shifted")
        assert other.name == "shifted"
        assert other.players is game2.players
        assert other.density.rho == -0.2
        assert game2.density.rho == 0.3

    def test_to_dict_is_plain(self, game2):
        data = game2.to_dict()
        assert data["utility"]["kind"] == "cournot"
        assert data["density"] == {"kind": "fgm", "rho": 0.3}
        assert data["players"][0]["action_space"] == {"lower": [0.0], "upper": [10.0]}

    def test_reversed_actions_match_generic_reversal(self):
        game = make_random_quadratic()
        reversed_game = game.reversed_actions(1)
        assert isinstance(reversed_game.utility, QuadraticUtility)
        generic = ReversedUtility(game.utility, 1, np.array([0.0]))
        rng = np.random.default_rng(4)
        actions, types = sample_profiles(game, rng, 200)
        for i in range(2):
            np.testing.assert_allclose(reversed_game.utility.grad(i, actions, types),
                                       generic.grad(i, actions, types), atol=1e-12)
        np.testing.assert_allclose(reversed_game.utility.value(0, actions, types),
                                   game.utility.value(0, [actions[0], -actions[1]], types), atol=1e-12)

    def test_reversal_turns_cournot_into_complements(self, game2):
        reversed_game = game2.reversed_actions(1)
        assert reversed_game.utility.cross_matrix(0, 1)[0, 0] == pytest.approx(1.0)
        assert reversed_game.utility.cross_matrix(1, 0)[0, 0] == pytest.approx(1.0)
        assert "reversed" in reversed_game.name

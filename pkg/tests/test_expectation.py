import numpy as np
import pytest

from best_response import estimate_moduli
from cournot import fgm_conditional_mean
from errors import DomainError, ShapeError
from expectation import QuadratureKind, QuadratureRule, build_context, conditional_mass, expected_grad, expected_utility
from strategy_space import StrategyGrid, StrategyProfile


def linear_profile(game, slope=1.0, intercept=0.0, node_counts=5):
    return StrategyProfile.from_function(game, lambda i, th: intercept + slope * th, node_counts)


class TestQuadratureRule:
    @pytest.mark.parametrize("kind, count", [(QuadratureKind.GAUSS_LEGENDRE, 1), (QuadratureKind.TRAPEZOID, 2)])
    def test_weights_sum_to_volume(self, game2, kind, count):
        nodes, weights = QuadratureRule(kind, count).on_box(game2.density.support)
        assert weights.sum() == pytest.approx(1.0)
        assert nodes.shape == (count ** 2, 2)

    def test_trapezoid_needs_two_nodes(self):
        with pytest.raises(ShapeError):
            QuadratureRule(QuadratureKind.TRAPEZOID, 1)


def test_conditional_mass_is_one(game2, rule):
    theta = np.linspace(0.0, 1.0, 9)[:, None]
    np.testing.assert_allclose(conditional_mass(game2, 0, theta, rule), 1.0, atol=1e-12)


def test_independent_types_reduce_to_plain_utility(game3, rule):
    rivals = StrategyProfile.constant(game3, [[1.0], [2.0], [3.0]], node_counts=3)
    # u_0 = (α − θ_0) a_0 − (β + c/2) a_0² − β a_0 (a_1 + a_2)
    expected = (10.0 - 0.2) * 1.5 - 1.5 * 1.5 ** 2 - 1.5 * 5.0
    assert expected_utility(game3, 0, [1.5], rivals, [0.2], rule) == pytest.approx(expected)


def test_expected_grad_uses_fgm_conditional_mean(game2, rule):
    rivals = linear_profile(game2)
    theta_i = 0.8
    a_i = 2.0
    mean = float(fgm_conditional_mean(theta_i, 0.3))
    expected = (10.0 - theta_i) - 3.0 * a_i - mean
    np.testing.assert_allclose(expected_grad(game2, 0, [a_i], rivals, [theta_i], rule), [expected], rtol=1e-12)


@pytest.mark.parametrize("theta_i", [0.0, 0.35, 1.0])
def test_expected_grad_matches_finite_differences(random_quadratic, rule, theta_i):
    rivals = linear_profile(random_quadratic, slope=-2.0, intercept=1.0)
    h = 1e-5
    a = 0.7
    fd = (expected_utility(random_quadratic, 1, [a + h], rivals, [theta_i], rule)
          - expected_utility(random_quadratic, 1, [a - h], rivals, [theta_i], rule)) / (2 * h)
    grad = expected_grad(random_quadratic, 1, [a], rivals, [theta_i], rule)[0]
    assert grad == pytest.approx(fd, rel=1e-6, abs=1e-7)


def test_context_batches_nodes(game2, rule):
    rivals = linear_profile(game2)
    theta = np.array([[0.0], [0.5], [1.0]])
    ctx = build_context(game2, 1, rivals, theta, rule)
    assert ctx.batch == 3
    assert ctx.weights.shape == (3, 16)
    np.testing.assert_allclose(ctx.weights.sum(axis=1), 1.0)
    values = ctx.value(np.full((3, 1), 2.0))
    singles = [expected_utility(game2, 1, [2.0], rivals, [t], rule) for t in theta[:, 0]]
    np.testing.assert_allclose(values, singles)


def test_out_of_box_type_rejected(game2, rule):
    with pytest.raises(DomainError):
        expected_utility(game2, 0, [1.0], linear_profile(game2), [1.5], rule)


def test_wrong_number_of_strategies(game2, rule):
    grid = StrategyGrid.constant(game2.type_space(0), game2.action_space(0), 1.0, node_counts=3)
    with pytest.raises(ShapeError):
        expected_utility(game2, 0, [1.0], [grid], [0.5], rule)


@pytest.mark.parametrize("theta_i", [0.1, 0.5, 0.93])
def test_gauss_legendre_agrees_with_fine_trapezoid(random_quadratic, theta_i):
    rivals = linear_profile(random_quadratic)
    coarse = expected_utility(random_quadratic, 0, [0.7], rivals, [theta_i], QuadratureRule(nodes_per_axis=32))
    fine = expected_utility(random_quadratic, 0, [0.7], rivals, [theta_i],
                            QuadratureRule(QuadratureKind.TRAPEZOID, 2001))
    assert coarse == pytest.approx(fine, abs=1e-7)


class TestExpectedGradientModuli:
    """Moduli of u_i carry over to ϑ_i once the rivals' strategies are integrated out."""

    samples = 1000

    @pytest.fixture
    def moduli(self, random_quadratic):
        return estimate_moduli(random_quadratic)

    @pytest.mark.parametrize("i", [0, 1])
    def test_own_type_lipschitz(self, random_quadratic, rule, moduli, i):
        rng = np.random.default_rng(11 + i)
        rivals = linear_profile(random_quadratic, slope=-2.0, intercept=1.0)
        theta = rng.uniform(0.0, 1.0, size=(self.samples, 1))
        other = rng.uniform(0.0, 1.0, size=(self.samples, 1))
        a = rng.uniform(-5.0, 5.0, size=(self.samples, 1))
        g1 = build_context(random_quadratic, i, rivals, theta, rule).grad(a)
        g2 = build_context(random_quadratic, i, rivals, other, rule).grad(a)
        change = np.linalg.norm(g1 - g2, axis=-1)
        assert np.all(change <= moduli.kappa[i] * np.abs(theta - other)[:, 0] + 1e-9)

    @pytest.mark.parametrize("i", [0, 1])
    def test_strong_concavity_survives_integration(self, random_quadratic, rule, moduli, i):
        rng = np.random.default_rng(21 + i)
        rivals = linear_profile(random_quadratic, slope=-2.0, intercept=1.0)
        theta = rng.uniform(0.0, 1.0, size=(self.samples, 1))
        ctx = build_context(random_quadratic, i, rivals, theta, rule)
        a = rng.uniform(-5.0, 5.0, size=(self.samples, 1))
        b = rng.uniform(-5.0, 5.0, size=(self.samples, 1))
        quotient = np.sum((ctx.grad(a) - ctx.grad(b)) * (a - b), axis=-1)
        assert np.all(quotient <= -moduli.sigma[i] * np.sum((a - b) ** 2, axis=-1) + 1e-9)

    @pytest.mark.parametrize("i", [0, 1])
    def test_rival_sensitivity_is_blockwise(self, random_quadratic, rule, moduli, i):
        rng = np.random.default_rng(31 + i)
        theta = np.linspace(0.0, 1.0, 41)[:, None]
        a = rng.uniform(-5.0, 5.0, size=(41, 1))
        for _ in range(25):
            f, g = (StrategyProfile.from_function(
                random_quadratic, lambda j, th: rng.uniform(-5.0, 5.0, size=th.shape), node_counts=9)
                for _ in range(2))
            change = np.linalg.norm(build_context(random_quadratic, i, f, theta, rule).grad(a)
                                    - build_context(random_quadratic, i, g, theta, rule).grad(a), axis=-1)
            bound = sum(moduli.tau[i][j] * np.max(np.abs(f[j].values - g[j].values))
                        for j in random_quadratic.rivals(i))
            assert np.all(change <= bound + 1e-9)

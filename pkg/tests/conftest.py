from pathlib import Path

import numpy as np
import pytest

from cournot import complements_game, cournot2, cournot3
from expectation import QuadratureRule
from game_model import BoxSpace, FGMDensity, GameSpec, PlayerSpec, QuadraticUtility

GAMES_DIR = Path(__file__).resolve().parent.parent / "games"


@pytest.fixture
def games_dir() -> Path:
    return GAMES_DIR


@pytest.fixture
def rule() -> QuadratureRule:
    return QuadratureRule(nodes_per_axis=16)


@pytest.fixture
def game2() -> GameSpec:
    return cournot2()


@pytest.fixture
def game3() -> GameSpec:
    return cournot3()


@pytest.fixture
def complements() -> GameSpec:
    return complements_game()


def make_random_quadratic(seed: int = 3, rho: float = 0.2) -> GameSpec:
    """Two players, scalar actions and types, strongly concave with weak cross effects."""
    rng = np.random.default_rng(seed)
    players = tuple(PlayerSpec(BoxSpace([0.0], [1.0]), BoxSpace([-5.0], [5.0])) for _ in range(2))
    utility = QuadraticUtility(
        H=[[[-(2.0 + rng.uniform())]] for _ in range(2)],
        b=[[rng.uniform(-1, 1)] for _ in range(2)],
        C=[{1 - i: [[rng.uniform(-0.5, 0.5)]]} for i in range(2)],
        D=[[[rng.uniform(-1, 1)]] for _ in range(2)],
        E=[{1 - i: [[rng.uniform(-1, 1)]]} for i in range(2)],
        action_dims=[1, 1],
        type_dims=[1, 1],
    )
    density = FGMDensity([p.type_space for p in players], rho)
    return GameSpec(players=players, utility=utility, density=density, name="random-quadratic")


@pytest.fixture
def random_quadratic() -> GameSpec:
    return make_random_quadratic()


@pytest.fixture(autouse=True)
def _isolated_output(tmp_path, monkeypatch):
    monkeypatch.delenv("CBNE_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("LOG_LEVEL", raising=False)
    monkeypatch.chdir(tmp_path)

import copy

import pytest

from errors import ConfigError
from game_config import load_game, parse_game_dict
from game_model import DensityKind, UtilityKind

BASE = {
    "name": "duopoly",
    "n_players": 2,
    "players": [
        {"type_lower": [0.0], "type_upper": [1.0], "action_lower": [0.0], "action_upper": [10.0]},
        {"type_lower": [0.0], "type_upper": [1.0], "action_lower": [0.0], "action_upper": [10.0]},
    ],
    "utility": {"kind": "cournot", "alpha": 10.0, "beta": 1.0, "c": 1.0},
    "density": {"kind": "fgm", "rho": 0.3},
}


def game_dict(**changes):
    data = copy.deepcopy(BASE)
    data.update(changes)
    return data


def test_bundled_games_load(games_dir):
    game2 = load_game(games_dir / "cournot2.json")
    game3 = load_game(games_dir / "cournot3.toml")
    assert game2.n == 2
    assert game2.density.kind == DensityKind.FGM
    assert game3.n == 3
    assert game3.utility.kind == UtilityKind.LINEAR_QUADRATIC_COURNOT
    assert game2.metadata["source"].endswith("cournot2.json")


@pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
def test_fgm_rho_outside_open_interval(rho):
    with pytest.raises(ConfigError) as info:
        parse_game_dict(game_dict(density={"kind": "fgm", "rho": rho}))
    assert "density.rho" in info.value.paths


def test_nested_mixture_error_has_full_path():
    density = {"kind": "mixture", "base": {"kind": "fgm", "rho": 2.0}, "alternative": {"kind": "uniform"},
               "epsilon": 0.1}
    with pytest.raises(ConfigError) as info:
        parse_game_dict(game_dict(density=density))
    assert "density.base.rho" in info.value.paths


def test_mixture_builds():
    density = {"kind": "mixture", "base": {"kind": "uniform"}, "alternative": {"kind": "fgm", "rho": 0.6},
               "epsilon": 0.25}
    game = parse_game_dict(game_dict(density=density))
    assert game.density.kind == DensityKind.MIXTURE


def test_unknown_utility_kind():
    with pytest.raises(ConfigError) as info:
        parse_game_dict(game_dict(utility={"kind": "bertrand"}))
    assert info.value.paths == ["utility.kind"]


def test_player_count_mismatch():
    with pytest.raises(ConfigError):
        parse_game_dict(game_dict(n_players=3))


def test_missing_players():
    data = game_dict()
    del data["players"]
    with pytest.raises(ConfigError) as info:
        parse_game_dict(data)
    assert "players" in info.value.paths


def test_inverted_box():
    data = game_dict()
    data["players"][1]["action_upper"] = [-1.0]
    with pytest.raises(ConfigError) as info:
        parse_game_dict(data)
    assert info.value.paths[0].startswith("players.1")


def test_negative_beta():
    with pytest.raises(ConfigError) as info:
        parse_game_dict(game_dict(utility={"kind": "cournot", "alpha": 10.0, "beta": -1.0, "c": 1.0}))
    assert "utility.beta" in info.value.paths


def test_quadratic_utility_builds():
    utility = {
        "kind": "quadratic",
        "players": [
            {"H": [[-2.0]], "b": [1.0], "C": {"1": [[0.5]]}, "D": [[1.0]]},
            {"H": [[-3.0]], "b": [0.0], "C": {"0": [[-0.5]]}},
        ],
    }
    game = parse_game_dict(game_dict(utility=utility, density={"kind": "uniform"}))
    assert game.utility.kind == UtilityKind.GENERAL_QUADRATIC


def test_quadratic_player_count_must_match():
    utility = {"kind": "quadratic", "players": [{"H": [[-2.0]], "b": [1.0]}]}
    with pytest.raises(ConfigError) as info:
        parse_game_dict(game_dict(utility=utility))
    assert info.value.paths == ["utility.players"]


def test_unsupported_suffix(tmp_path):
    path = tmp_path / "game.yaml"
    path.write_text("name: x")
    with pytest.raises(ConfigError):
        load_game(path)


def test_malformed_json(tmp_path):
    path = tmp_path / "game.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_game(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_game(tmp_path / "absent.json")

import orjson
import pytest
from pydantic import ValidationError

from cli import RunConfig, main, parse_config
from errors import ConfigError
from report_schema import ReportEnvelope, SweepReport, report_model

FAST = ["--grid", "11", "--quad", "16"]


def reports(directory, subcommand):
    return sorted(p for p in directory.glob(f"{subcommand}_*.json") if "_player" not in p.stem)


def test_verify_cournot2(tmp_path):
    assert main(["verify-example", "cournot2", "--grid", "21", "--quad", "16", "--output-dir", str(tmp_path)]) == 0
    (path,) = reports(tmp_path, "verify-example")
    body = orjson.loads(path.read_bytes())
    assert body["passed"] is True
    assert body["checks"]["closed_form"] is True
    assert (tmp_path / f"{path.stem}_player0.csv").exists()


def test_verify_cournot3(tmp_path):
    assert main(["verify-example", "cournot3", *FAST, "--output-dir", str(tmp_path)]) == 0
    body = orjson.loads(reports(tmp_path, "verify-example")[0].read_bytes())
    assert set(body["checks"]) >= {"sigma", "tau", "alpha", "fixed_point_residual", "iteration_bound"}


def test_invalid_example_parameter_fails(tmp_path):
    assert main(["verify-example", "cournot2", "--rho", "1.0", *FAST, "--output-dir", str(tmp_path)]) == 1
    assert reports(tmp_path, "verify-example") == []


def test_solve_is_deterministic(tmp_path, games_dir):
    argv = ["solve", "--game", str(games_dir / "cournot2.json"), *FAST, "--seed", "7", "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    assert main(argv) == 0
    first, second = reports(tmp_path, "solve")
    assert first.read_bytes() == second.read_bytes()


def test_env_output_dir_wins(tmp_path, games_dir, monkeypatch):
    target = tmp_path / "from-env"
    monkeypatch.setenv("CBNE_OUTPUT_DIR", str(target))
    assert main(["moduli", "--game", str(games_dir / "cournot2.json"), "--trials", "5",
                 "--output-dir", str(tmp_path / "ignored")]) == 0
    assert len(reports(target, "moduli")) == 1


def test_distance_report(tmp_path, games_dir):
    argv = ["distance", "--game", str(games_dir / "cournot2.json"), "--rho2", "0.6", "--cells", "21",
            "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    assert reports(tmp_path, "distance")


def test_monotone_without_order_structure_fails(tmp_path, games_dir):
    argv = ["monotone", "--game", str(games_dir / "cournot3.toml"), *FAST, "--output-dir", str(tmp_path)]
    assert main(argv) == 1


def test_monotone_reverses_cournot2(tmp_path, games_dir):
    argv = ["monotone", "--game", str(games_dir / "cournot2.json"), *FAST, "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    body = orjson.loads(reports(tmp_path, "monotone")[0].read_bytes())
    assert body["result"]["equilibrium"]["reversed_players"] == [1]
    assert main([*argv, "--no-reversal"]) == 1


@pytest.mark.parametrize("argv", [
    ["solve", "--game", "games/cournot2.json", "--tol", "0"],
    ["solve", "--game", "games/cournot2.json", "--eps", "-1"],
    ["stability", "--game", "games/cournot2.json"],
    ["solve"],
])
def test_invalid_configuration_returns_one(argv):
    assert main(argv) == 1


def test_parse_config_keeps_defaults(games_dir):
    config = parse_config(["solve", "--game", str(games_dir / "cournot2.json"), "--p", "2"])
    assert isinstance(config, RunConfig)
    assert config.norm == 2.0
    assert "output_dir" not in config.hash_payload()


def test_epsilon_range_checked(games_dir):
    with pytest.raises(ConfigError) as info:
        parse_config(["stability", "--game", str(games_dir / "cournot2.json"), "--rho2", "0.5", "--epsilon", "2"])
    assert "epsilon" in info.value.paths


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["equilibrate"])


@pytest.mark.slow
def test_sweep_writes_table(tmp_path, games_dir):
    argv = ["sweep", "--game", str(games_dir / "cournot2.json"), "--rho2", "0.6", "--eps-list", "0.4", "0.2", "0.1",
            "0.05", "--grid", "21", "--quad", "16", "--cells", "41", "--output-dir", str(tmp_path)]
    assert main(argv) == 0
    (path,) = reports(tmp_path, "sweep")
    assert (tmp_path / f"{path.stem}_sweep.csv").exists()
    SweepReport.parse_obj(orjson.loads(path.read_bytes()))


@pytest.mark.parametrize("subcommand, extra", [
    ("solve", []),
    ("monotone", []),
    ("moduli", ["--trials", "5"]),
    ("distance", ["--rho2", "0.6", "--cells", "21"]),
    ("stability", ["--rho2", "0.31", "--grid", "21", "--cells", "41"]),
    ("verify-example", ["--grid", "21"]),
])
def test_reports_match_published_schema(tmp_path, games_dir, subcommand, extra):
    source = ["cournot2"] if subcommand == "verify-example" else ["--game", str(games_dir / "cournot2.json")]
    assert main([subcommand, *source, *FAST, *extra, "--output-dir", str(tmp_path)]) == 0
    (path,) = reports(tmp_path, subcommand)
    body = orjson.loads(path.read_bytes())
    report = report_model(subcommand).parse_obj(body)
    assert report.subcommand == subcommand
    assert set(body) == set(ReportEnvelope.__fields__)


def test_schema_rejects_unknown_result_fields():
    body = {"subcommand": "moduli", "config": {}, "config_hash": "0", "game": None, "system": {}, "checks": {},
            "passed": True, "result": {"moduli": None, "surprise": 1}}
    with pytest.raises(ValidationError):
        report_model("moduli").parse_obj(body)
    with pytest.raises(ValueError):
        report_model("equilibrate")

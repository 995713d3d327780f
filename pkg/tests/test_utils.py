import logging

import numpy as np
import orjson
import pytest

from utils import LOG_FILE, dumps_report, resolve_log_level, setup_logging


@pytest.fixture
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


def test_setup_logging_writes_the_rotating_file(tmp_path, restore_root_logger):
    path = setup_logging("INFO")
    assert path == LOG_FILE
    logging.getLogger("cbne.test").info("solver started")
    for handler in restore_root_logger.handlers:
        handler.flush()
    assert (tmp_path / LOG_FILE).exists()
    assert "solver started" in (tmp_path / LOG_FILE).read_text(encoding="utf-8")


def test_env_log_level_wins(monkeypatch, restore_root_logger):
    monkeypatch.setenv("LOG_LEVEL", "warning")
    setup_logging("DEBUG")
    assert restore_root_logger.level == logging.WARNING
    assert logging.getLogger("asyncio").level == logging.WARNING


def test_repeated_setup_does_not_stack_handlers(restore_root_logger):
    setup_logging("INFO")
    setup_logging("INFO")
    assert len(restore_root_logger.handlers) == 2


@pytest.mark.parametrize("name, expected", [("debug", logging.DEBUG), ("ERROR", logging.ERROR), ("loud", logging.INFO)])
def test_resolve_log_level(name, expected):
    assert resolve_log_level(name) == expected


def test_report_floats_reload_bit_exact():
    values = np.random.default_rng(8).normal(scale=1e-3, size=200).tolist() + [0.1, 1 / 3, 2.0 ** -1074]
    reloaded = orjson.loads(dumps_report({"values": values}))["values"]
    assert reloaded == values
    assert orjson.loads(dumps_report({"x": float("inf")}))["x"] == "inf"

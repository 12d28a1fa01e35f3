"""Tests for the shared logger setup."""

import logging

import pytest

from src.back.logging_config import ColoredFormatter, logger, resolve_level, set_log_level, setup_logger


@pytest.fixture(autouse=True)
def restore_level():
    previous = logger.level
    yield
    logging.getLogger("cardiora").setLevel(previous)
    for handler in logger.handlers:
        handler.setLevel(previous)


class TestResolveLevel:
    def test_explicit_beats_environment(self, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "ERROR")
        assert resolve_level("debug") == logging.DEBUG
        assert resolve_level() == logging.ERROR

    def test_default_is_info(self, monkeypatch):
        monkeypatch.delenv("LOG_LEVEL", raising=False)
        assert resolve_level() == logging.INFO

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            resolve_level("chatty")


class TestLogger:
    def test_set_log_level_updates_handlers(self):
        set_log_level("WARNING")
        assert logger.level == logging.WARNING
        assert all(handler.level == logging.WARNING for handler in logger.handlers)

    def test_bad_environment_level_falls_back(self, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "chatty")
        assert setup_logger("cardiora.test").level == logging.INFO

    def test_single_handler(self):
        setup_logger()
        assert len(logger.handlers) == 1
        assert not logger.propagate


class TestColoredFormatter:
    def _record(self, level):
        return logging.LogRecord("cardiora", level, __file__, 1, "epoch 3 done", None, None)

    def test_plain_when_color_disabled(self):
        message = ColoredFormatter(use_color=False).format(self._record(logging.INFO))
        assert "\033[" not in message
        assert message.endswith("INFO - epoch 3 done")

    def test_colored_by_level(self):
        message = ColoredFormatter().format(self._record(logging.ERROR))
        assert message.startswith(ColoredFormatter.COLORS["ERROR"])
        assert message.endswith(ColoredFormatter.COLORS["RESET"])

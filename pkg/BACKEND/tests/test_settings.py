import logging

import pytest
from pydantic import ValidationError

from app.settings import Settings, get_settings


def test_settings():
    settings = get_settings()
    assert settings.LOG_LEVEL == "INFO"
    assert settings.OUTPUT_DIR == "out"
    assert settings.CHUNK_FRAMES == 200_000
    assert get_settings() is settings


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("PHASES_OUTPUT_DIR", "/tmp/phases")
    monkeypatch.setenv("PHASES_CHUNK_FRAMES", "5000")
    settings = Settings()
    assert settings.OUTPUT_DIR == "/tmp/phases"
    assert settings.CHUNK_FRAMES == 5000


def test_invalid_setting(monkeypatch):
    monkeypatch.setenv("PHASES_PLOT_DPI", "1")
    with pytest.raises(ValidationError):
        Settings()


def test_log_settings(caplog):
    with caplog.at_level(logging.INFO, logger="app.settings"):
        get_settings().log_settings()
    assert "OUTPUT_DIR: out" in caplog.text

import logging
from pathlib import Path

import pytest

from app.config import (
    DEFAULT_K_RANGE,
    PipelineConfig,
    apply_overrides,
    dump_pipeline_config,
    init_logging,
    load_pipeline_config,
    parse_k_range,
)
from app.errors import ConfigurationError
from app.models import AttackDirection

EXAMPLE = Path(__file__).resolve().parent.parent / "configs" / "example.toml"


def test_example_config():
    config = load_pipeline_config(EXAMPLE)
    assert len(config.timeline.periods) == 2
    assert config.timeline.periods[1].attack_direction is AttackDirection.NEGATIVE_X
    assert config.roster.active == [1, 2, 3, 5, 6]
    assert config.clustering.k_range == (2, 12)
    assert config.input.columns["player_id"] == "tag"
    # relative paths resolve against the config file
    assert config.input.path == EXAMPLE.parent / "../data/match.csv"
    assert config.output_dir == EXAMPLE.parent / "../out/match"


def test_defaults():
    config = PipelineConfig()
    assert config.clustering.k is None
    assert config.clustering.k_range == DEFAULT_K_RANGE
    assert config.kalman.enabled
    assert config.grid.step_ms == 1
    assert config.output_dir == Path("out")


def test_kalman_params_follow_the_grid():
    params = PipelineConfig().kalman.params(20)
    assert params.dt == pytest.approx(0.02)
    assert params.measurement_noise == 0.04


@pytest.mark.parametrize("text", [
    "[clustering]\nk = 3\nk_range = [2, 5]\n",
    "[clustering]\nk_range = [5, 2]\n",
    "[grid]\nstep_ms = 0\n",
    "[kalman]\nmystery = 1\n",
    "[input]\nscale = -1.0\n",
    "[[timeline.periods]]\nstart_ms = 10\nend_ms = 5\n",
    "[input\n",
])
def test_invalid_configs(tmp_path, text):
    path = tmp_path / "bad.toml"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        load_pipeline_config(path)


def test_missing_config(tmp_path):
    with pytest.raises(ConfigurationError):
        load_pipeline_config(tmp_path / "absent.toml")


def test_flags_override_config():
    config = load_pipeline_config(EXAMPLE)
    overridden = apply_overrides(config, input="other.csv", out="elsewhere", grid_ms=20, k=4, seed=7,
                                 restarts=3, no_kalman=True, no_plots=True)
    assert overridden.input.path == Path("other.csv")
    assert overridden.output_dir == Path("elsewhere")
    assert overridden.grid.step_ms == 20
    assert (overridden.clustering.k, overridden.clustering.k_range) == (4, None)
    assert (overridden.clustering.seed, overridden.clustering.restarts) == (7, 3)
    assert not overridden.kalman.enabled
    assert not overridden.output.plots

    ranged = apply_overrides(overridden, k_range=(3, 6))
    assert (ranged.clustering.k, ranged.clustering.k_range) == (None, (3, 6))


def test_absent_flags_keep_config():
    config = load_pipeline_config(EXAMPLE)
    assert apply_overrides(config, input=None, k=None, no_kalman=False) == config


def test_bad_override():
    with pytest.raises(ConfigurationError):
        apply_overrides(PipelineConfig(), k_range=(4, 4))


def test_dump_then_load(tmp_path):
    config = load_pipeline_config(EXAMPLE)
    path = tmp_path / "copy.toml"
    path.write_text(dump_pipeline_config(config))
    assert load_pipeline_config(path) == config


def test_echo_leaves_out_locations():
    echo = load_pipeline_config(EXAMPLE).echo()
    assert "path" not in echo["input"]
    assert "dir" not in echo["output"]
    assert echo["clustering"]["k_range"] == [2, 12]


def test_parse_k_range():
    assert parse_k_range("2,9") == (2, 9)
    with pytest.raises(ValueError):
        parse_k_range("2-9")


def test_init_logging_levels():
    init_logging(quiet=True)
    assert logging.getLogger().level == logging.WARNING
    init_logging("debug")
    assert logging.getLogger().level == logging.DEBUG

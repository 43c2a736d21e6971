"""Pipeline configuration file, flag overrides and logging setup."""

import json
import logging
from pathlib import Path
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigurationError
from .models import SAMPLE_COLUMNS, CourtDimensions, KalmanParams, MatchTimeline, RecordFormat
from .settings import get_settings

logger = logging.getLogger(__name__)

DEFAULT_K_RANGE = (2, 12)
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InputConfig(_Section):
    path: Optional[Path] = None
    delimiter: str = ","
    columns: Dict[str, Union[int, str]] = Field(
        default_factory=lambda: {name: i for i, name in enumerate(SAMPLE_COLUMNS)}
    )
    scale: float = Field(default=1.0, gt=0)
    header: Optional[bool] = None
    reject_threshold: int = Field(default=100, ge=0)
    encoding: str = "utf-8"

    def record_format(self) -> RecordFormat:
        return RecordFormat(**self.model_dump(exclude={"path"}))


class RosterConfig(_Section):
    active: Optional[List[int]] = None


class GridConfig(_Section):
    step_ms: int = Field(default=1, ge=1)


class KalmanConfig(_Section):
    enabled: bool = True
    process_noise_accel: float = Field(default=1.0, ge=0)
    measurement_noise: float = Field(default=0.04, ge=0)
    initial_velocity_variance: float = Field(default=10.0, ge=0)

    def params(self, grid_step: int) -> KalmanParams:
        return KalmanParams.for_grid_step(grid_step, **self.model_dump(exclude={"enabled"}))


class FeaturesConfig(_Section):
    standardize: bool = False


class ClusteringConfig(_Section):
    k: Optional[int] = Field(default=None, ge=1)
    k_range: Optional[Tuple[int, int]] = None
    seed: int = 0
    restarts: int = Field(default=10, ge=1)
    max_iter: int = Field(default=300, ge=1)
    tol: float = Field(default=1e-6, ge=0)
    min_ratio: float = Field(default=0.5, ge=0, le=1)
    min_gain: float = Field(default=0.03, ge=0, le=1)

    @field_validator("k_range")
    @classmethod
    def _ordered_range(cls, value: Optional[Tuple[int, int]]) -> Optional[Tuple[int, int]]:
        if value is not None and not (1 <= value[0] < value[1]):
            raise ValueError(f"k_range must satisfy 1 <= low < high, got {list(value)}")
        return value

    @model_validator(mode="after")
    def _one_k(self) -> "ClusteringConfig":
        if self.k is not None and self.k_range is not None:
            raise ValueError("set either k or k_range, not both")
        if self.k is None and self.k_range is None:
            self.k_range = DEFAULT_K_RANGE
        return self


class AnalysisConfig(_Section):
    phase_threshold: float = Field(default=0.5, ge=0, le=1)


class OutputConfig(_Section):
    dir: Optional[Path] = None
    plots: bool = True


class PipelineConfig(_Section):
    input: InputConfig = Field(default_factory=InputConfig)
    timeline: MatchTimeline = Field(default_factory=MatchTimeline)
    court: CourtDimensions = Field(default_factory=CourtDimensions)
    roster: RosterConfig = Field(default_factory=RosterConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    kalman: KalmanConfig = Field(default_factory=KalmanConfig)
    features: FeaturesConfig = Field(default_factory=FeaturesConfig)
    clustering: ClusteringConfig = Field(default_factory=ClusteringConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @property
    def output_dir(self) -> Path:
        return self.output.dir if self.output.dir is not None else Path(get_settings().OUTPUT_DIR)

    def echo(self) -> Dict[str, Any]:
        """JSON-ready copy recorded in the report, without file locations."""
        return self.model_dump(mode="json", exclude={"input": {"path"}, "output": {"dir"}})


def _validate(data: Dict[str, Any], origin: str) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        logger.error(f"Invalid pipeline config {origin}")
        raise ConfigurationError(f"invalid pipeline config {origin}: {e}")


def load_pipeline_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """Read a TOML pipeline config; relative paths resolve against its directory."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} does not exist")
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid TOML: {e}")

    for section, key in (("input", "path"), ("output", "dir")):
        value = data.get(section, {}).get(key)
        if isinstance(value, str) and not Path(value).is_absolute():
            data[section][key] = str(path.parent / value)
    config = _validate(data, str(path))
    logger.info(f"Loaded pipeline config from {path}")
    return config


def apply_overrides(config: PipelineConfig, **flags: Any) -> PipelineConfig:
    """Command-line flags win over config keys; ``None`` means not given."""
    data = config.model_dump()
    if flags.get("input") is not None:
        data["input"]["path"] = flags["input"]
    if flags.get("out") is not None:
        data["output"]["dir"] = flags["out"]
    if flags.get("grid_ms") is not None:
        data["grid"]["step_ms"] = flags["grid_ms"]
    if flags.get("k") is not None:
        data["clustering"].update(k=flags["k"], k_range=None)
    if flags.get("k_range") is not None:
        data["clustering"].update(k=None, k_range=flags["k_range"])
    for key in ("seed", "restarts"):
        if flags.get(key) is not None:
            data["clustering"][key] = flags[key]
    if flags.get("no_kalman"):
        data["kalman"]["enabled"] = False
    if flags.get("no_plots"):
        data["output"]["plots"] = False
    return _validate(data, "after command-line overrides")


def parse_k_range(text: str) -> Tuple[int, int]:
    try:
        low, high = (int(part) for part in text.split(","))
    except ValueError:
        raise ValueError(f"expected A,B, got {text!r}")
    return low, high


def _toml_scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    if isinstance(value, dict):
        return "{ " + ", ".join(f"{json.dumps(k)} = {_toml_scalar(v)}" for k, v in value.items()) + " }"
    return json.dumps(str(value))


def dump_pipeline_config(config: PipelineConfig) -> str:
    """TOML text that ``load_pipeline_config`` reads back to the same config."""
    data = config.model_dump(mode="json")
    lines: List[str] = []
    for section, values in data.items():
        if section == "timeline":
            for period in values["periods"]:
                lines.append("[[timeline.periods]]")
                lines += [f"{k} = {_toml_scalar(v)}" for k, v in period.items()]
                lines.append("")
            continue
        lines.append(f"[{section}]")
        lines += [f"{k} = {_toml_scalar(v)}" for k, v in values.items() if v is not None]
        lines.append("")
    return "\n".join(lines)


def init_logging(level: Optional[str] = None, quiet: bool = False) -> None:
    """Root logging to stderr; ``quiet`` keeps only warnings and errors."""
    level = "WARNING" if quiet else (level or get_settings().LOG_LEVEL)
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)

from typing import Optional


class PipelineError(Exception):
    """Base error for every pipeline stage.

    ``detail`` carries the human readable message and ``stage`` names the
    pipeline stage that failed, so the CLI can report it on stderr.
    """

    stage: str = "pipeline"

    def __init__(self, detail: str, stage: Optional[str] = None):
        super().__init__(detail)
        self.detail = detail
        if stage is not None:
            self.stage = stage

    def __str__(self) -> str:
        return f"[{self.stage}] {self.detail}"


class ConfigurationError(PipelineError):
    stage = "config"


class ParseError(PipelineError):
    stage = "ingest"


class TimelineMismatchError(PipelineError):
    stage = "ingest"


class RosterError(ConfigurationError):
    stage = "ingest"


class RegularizationError(PipelineError):
    stage = "ingest"


class FilterError(PipelineError):
    stage = "filter"


class FeatureError(PipelineError):
    stage = "features"


class ClusteringError(PipelineError):
    stage = "fit"


class AnalysisError(PipelineError):
    stage = "report"


class ScenarioError(PipelineError):
    stage = "synth"


class ArtifactError(PipelineError):
    stage = "storage"

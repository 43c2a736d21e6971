from functools import lru_cache
import logging
from pathlib import Path

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)

# Load environment variables
env_path = Path(__file__).parent.parent / '.env'
load_dotenv(dotenv_path=env_path)


class Settings(BaseSettings):
    """Process-level settings, read from ``PHASES_*`` environment variables."""

    model_config = SettingsConfigDict(env_prefix="PHASES_", extra="ignore")

    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "out"
    CHUNK_FRAMES: int = Field(default=200_000, ge=1)
    PLOT_DPI: int = Field(default=100, ge=10)
    SVG_FONT_SIZE: float = Field(default=9.0, gt=0)

    def log_settings(self) -> None:
        """Log all settings values"""
        logger.info("Settings loaded with values:")
        for key, value in sorted(self.model_dump().items()):
            logger.info(f"{key}: {value}")


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()

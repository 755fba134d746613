"""
Configuration management for MirrorBot.

Process-wide settings come from environment variables (a ``.env`` file is
honoured); per-experiment settings come from JSON files with ``${VAR}``
interpolation, see :func:`load_experiment_config`.
"""
import json
import os
import re
from pathlib import Path
from typing import Any, Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from app.core.exceptions import ConfigError


load_dotenv()


class Settings:
    """Application settings with environment variable support."""

    # Storage
    runs_dir: str = os.getenv("MIRRORBOT_RUNS_DIR", "runs")
    image_encoding: str = os.getenv("IMAGE_ENCODING", "reference")

    # Logging
    log_level: str = os.getenv("MIRRORBOT_LOG_LEVEL", "INFO")

    # Model backends
    api_key_env: str = os.getenv("MODEL_API_KEY_ENV", "MODEL_API_KEY")
    backend_timeout: float = float(os.getenv("BACKEND_TIMEOUT", "30"))
    backend_retries: int = int(os.getenv("BACKEND_RETRIES", "3"))
    retry_base_delay: float = float(os.getenv("RETRY_BASE_DELAY", "1.0"))
    retry_max_delay: float = float(os.getenv("RETRY_MAX_DELAY", "30.0"))
    judge_concurrency: int = int(os.getenv("JUDGE_CONCURRENCY", "4"))

    # Fusion
    packet_rate_hz: int = int(os.getenv("PACKET_RATE_HZ", "1"))
    fusion_window: float = float(os.getenv("FUSION_WINDOW", "0.050"))
    buffer_horizon: float = float(os.getenv("BUFFER_HORIZON", "2.0"))

    # Structural model estimation
    sem_multi_starts: int = int(os.getenv("SEM_MULTI_STARTS", "5"))
    sem_max_iterations: int = int(os.getenv("SEM_MAX_ITERATIONS", "2000"))
    sem_analytic_gradient: bool = os.getenv("SEM_ANALYTIC_GRADIENT", "false").lower() in ("1", "true", "yes")

    # Experiment defaults
    default_iterations: int = int(os.getenv("MIRRORBOT_ITERATIONS", "657"))
    default_seed: int = int(os.getenv("MIRRORBOT_SEED", "7"))

    def __init__(self):
        """Initialize settings."""
        pass


# Global settings instance
settings = Settings()


_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


def interpolate_env(text: str, environ: Optional[dict] = None) -> str:
    """
    Replace ``${VAR}`` and ``${VAR:-default}`` references with environment values.

    Raises:
        ConfigError: if a referenced variable is unset and has no default
    """
    environ = os.environ if environ is None else environ

    def _substitute(match: re.Match) -> str:
        name, default = match.group(1), match.group(2)
        value = environ.get(name)
        if value is None:
            if default is None:
                raise ConfigError(
                    f"Environment variable {name} referenced by config is not set",
                    details={"variable": name},
                )
            return default
        return value

    return _ENV_PATTERN.sub(_substitute, text)


def load_experiment_config(source: Union[str, Path, dict], environ: Optional[dict] = None):
    """
    Load an ExperimentConfig from a JSON file path or an already parsed mapping.

    String values inside files are environment-interpolated before validation.
    """
    # Local import: models depend on core, not the other way round
    from app.models.experiment import ExperimentConfig

    if isinstance(source, dict):
        payload: Any = source
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}", details={"path": str(path)})
        try:
            payload = json.loads(interpolate_env(path.read_text(encoding="utf-8"), environ))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file is not valid JSON: {e}", details={"path": str(path)})

    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(
            "Experiment config failed validation",
            details={"errors": [err["msg"] for err in e.errors()]},
        )

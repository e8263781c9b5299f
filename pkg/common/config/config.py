import logging
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional

import toml
from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

# Create module-level logger
logger = logging.getLogger(__name__)

DEFAULT_ENV = "local"
DEFAULT_LOG_FORMAT = (
    "%(log_color)s[%(asctime)s] [%(name)s] [%(levelname)s]%(reset)s %(message)s"
)
DEFAULT_LOG_COLORS = (
    '{"DEBUG": "cyan", "INFO": "green", "WARNING": "yellow", '
    '"ERROR": "red", "CRITICAL": "bold_red"}'
)


class ConfigError(Exception):
    """Configuration related exception"""
    pass


# =============================================================================
# Pydantic Configuration Model Definitions
# =============================================================================

class AppConfig(BaseModel):
    """Application base configuration"""

    app_name: str = Field(..., description="Application name")
    app_version: str = Field(..., description="Application version")
    env: str = Field(..., description="Runtime environment (local/dev/test etc.)")

    model_config = {
        "validate_assignment": True,
        "extra": "forbid"
    }


class AnalysisConfig(BaseModel):
    """Default parameters of WCET analyses and Monte Carlo runs"""

    delta: float = Field(1e-6, description="Approximation bound: probabilities at or below it count as zero")
    trials: int = Field(100_000, description="Monte Carlo trial count")
    seed: int = Field(0, description="Monte Carlo seed")
    max_sim_steps: int = Field(10_000_000, description="Per-trial step budget of the simulator")
    sim_workers: int = Field(1, description="Process shards used by the simulator")
    weight_tolerance: float = Field(1e-12, description="Tolerance on distribution sums")
    cutoff_tolerance: float = Field(1e-9, description="Relative tolerance of the delta cutoff test")

    model_config = {
        "validate_assignment": True,
        "extra": "forbid"
    }

    @field_validator("delta")
    @classmethod
    def _check_delta(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {value}")
        return value

    @field_validator("trials", "max_sim_steps", "sim_workers")
    @classmethod
    def _check_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError(f"value must be >= 1, got {value}")
        return value


class LoggingConfig(BaseModel):
    """Logging configuration"""

    level: str = Field(..., description="Log level")
    datefmt: str = Field(..., description="Log date format")
    format: str = Field(..., description="Log format")
    colors: str = Field(..., description="Log color configuration (JSON format)")


# =============================================================================
# Configuration Manager
# =============================================================================

class ConfigManager:
    """
    Configuration Manager - Singleton Pattern

    Responsibilities:
    1. Load environment variables and configuration files
    2. Create and cache various configuration objects
    3. Provide type-safe configuration access interface
    """

    _instance: Optional['ConfigManager'] = None
    _initialized: bool = False

    def __new__(cls) -> 'ConfigManager':
        """Ensure singleton pattern"""
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        """Initialize configuration manager"""
        if not self._initialized:
            self.project_root = Path(__file__).resolve().parent.parent.parent
            self._load_environment()
            self._initialized = True

    def _load_environment(self) -> None:
        """
        Load environment variables

        Loading order:
        1. .env general configuration
        2. .env.{env} environment-specific configuration
        3. System environment variables (highest priority)
        """
        logger.debug("Starting to load configuration...")

        system_env_backup = dict(os.environ)

        env_path = self.project_root / '.env'
        if env_path.exists():
            logger.debug(f"Loading general configuration: {env_path}")
            load_dotenv(dotenv_path=str(env_path), override=False)

        env = os.environ.get('ENV', DEFAULT_ENV)
        logger.debug(f"Current environment: {env}")

        env_specific_path = self.project_root / f'.env.{env}'
        if env_specific_path.exists():
            logger.debug(f"Loading environment-specific configuration: {env_specific_path}")
            load_dotenv(dotenv_path=str(env_specific_path), override=True)

        # System environment variables keep the highest priority
        os.environ.update(system_env_backup)
        os.environ.setdefault('ENV', env)

        logger.debug("Configuration loading completed")

    @staticmethod
    def _get_env(key: str, default: Optional[str] = None) -> str:
        """
        Get environment variable value

        Args:
            key: Environment variable name
            default: Default value (None means required)

        Returns:
            Environment variable value

        Raises:
            ConfigError: When required environment variable is missing
        """
        value = os.environ.get(key, default)
        if value is None or value.strip() == "":
            if default is not None:
                return default
            raise ConfigError(f"Missing required environment variable: {key}")
        return value

    @staticmethod
    def _get_env_int(key: str, default: Optional[int] = None) -> int:
        """Get integer type environment variable"""
        value = ConfigManager._get_env(
            key, str(default) if default is not None else None)
        try:
            return int(value)
        except (ValueError, TypeError):
            raise ConfigError(f"Environment variable {key} is not a valid integer: {value}")

    @staticmethod
    def _get_env_float(key: str, default: Optional[float] = None) -> float:
        """Get float type environment variable"""
        value = ConfigManager._get_env(
            key, repr(default) if default is not None else None)
        try:
            return float(value)
        except (ValueError, TypeError):
            raise ConfigError(f"Environment variable {key} is not a valid number: {value}")

    def _read_project_version(self) -> str:
        """Read the package version from pyproject.toml"""
        pyproject_path = self.project_root / "pyproject.toml"
        try:
            manifest = toml.load(pyproject_path)
            return manifest["tool"]["poetry"]["version"]
        except (OSError, KeyError, toml.TomlDecodeError) as e:
            logger.warning(f"Unable to read version from {pyproject_path}: {e}")
            return "0.0.0"

    @lru_cache(maxsize=None)
    def get_app_config(self) -> AppConfig:
        """Get application base configuration"""
        try:
            return AppConfig(
                app_name=self._get_env('APP_NAME', 'pta-wcet'),
                app_version=self._get_env('APP_VERSION', self._read_project_version()),
                env=self._get_env('ENV', DEFAULT_ENV)
            )
        except ValidationError as e:
            raise ConfigError(f"Application configuration validation failed: {e}")

    @lru_cache(maxsize=None)
    def get_analysis_config(self) -> AnalysisConfig:
        """Get analysis defaults"""
        defaults = AnalysisConfig()
        try:
            return AnalysisConfig(
                delta=self._get_env_float('WCET_DELTA', defaults.delta),
                trials=self._get_env_int('WCET_TRIALS', defaults.trials),
                seed=self._get_env_int('WCET_SEED', defaults.seed),
                max_sim_steps=self._get_env_int('WCET_MAX_SIM_STEPS', defaults.max_sim_steps),
                sim_workers=self._get_env_int('WCET_SIM_WORKERS', defaults.sim_workers),
                weight_tolerance=self._get_env_float(
                    'WCET_WEIGHT_TOLERANCE', defaults.weight_tolerance),
                cutoff_tolerance=self._get_env_float(
                    'WCET_CUTOFF_TOLERANCE', defaults.cutoff_tolerance),
            )
        except ValidationError as e:
            raise ConfigError(f"Analysis configuration validation failed: {e}")

    @lru_cache(maxsize=None)
    def get_logging_config(self) -> LoggingConfig:
        """Get logging configuration"""
        try:
            return LoggingConfig(
                level=self._get_env('LOGGING_LEVEL', 'INFO'),
                datefmt=self._get_env('LOGGING_DATEFMT', '%Y-%m-%d %H:%M:%S'),
                format=self._get_env('LOGGING_FORMAT', DEFAULT_LOG_FORMAT),
                colors=self._get_env('LOGGING_COLORS', DEFAULT_LOG_COLORS)
            )
        except ValidationError as e:
            raise ConfigError(f"Logging configuration validation failed: {e}")

    def get_health_status(self) -> Dict[str, Any]:
        """
        Get configuration health status

        Returns:
            Dictionary containing the loading status of each configuration item
        """
        health_status = {
            "initialized": self._initialized,
            "configs": {}
        }

        config_methods = {
            "app_config": self.get_app_config,
            "analysis_config": self.get_analysis_config,
            "logging_config": self.get_logging_config
        }

        for name, method in config_methods.items():
            try:
                method()
                health_status["configs"][name] = {"status": "ok"}
            except ConfigError as e:
                health_status["configs"][name] = {
                    "status": "error",
                    "message": str(e)
                }

        all_ok = all(cfg["status"] ==
                     "ok" for cfg in health_status["configs"].values())
        health_status["overall_status"] = "healthy" if all_ok else "unhealthy"

        return health_status

    def print_config(self) -> None:
        """Print a configuration summary to stdout"""
        app = self.get_app_config()
        analysis = self.get_analysis_config()
        logging_config = self.get_logging_config()

        print(f"Application: {app.app_name} {app.app_version} (env={app.env})")
        print("Analysis defaults:")
        for name, value in analysis.model_dump().items():
            print(f"  {name}: {value}")
        print(f"Logging level: {logging_config.level}")

    def clear_cache(self) -> None:
        """Drop cached configuration objects so the next access re-reads the environment"""
        ConfigManager.get_app_config.cache_clear()
        ConfigManager.get_analysis_config.cache_clear()
        ConfigManager.get_logging_config.cache_clear()


# =============================================================================
# Global Configuration Instance
# =============================================================================

config_manager = ConfigManager()


def get_app_config() -> AppConfig:
    """Get application configuration"""
    return config_manager.get_app_config()


def get_analysis_config() -> AnalysisConfig:
    """Get analysis configuration"""
    return config_manager.get_analysis_config()


def get_logging_config() -> LoggingConfig:
    """Get logging configuration"""
    return config_manager.get_logging_config()


__all__ = [
    # Exception classes
    'ConfigError',

    # Configuration manager
    'ConfigManager',
    'config_manager',

    # Pydantic models
    'AppConfig',
    'AnalysisConfig',
    'LoggingConfig',

    # Convenience functions
    'get_app_config',
    'get_analysis_config',
    'get_logging_config',
]

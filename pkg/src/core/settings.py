"""
Gate Energetics - Settings
Configuración de proceso leída del entorno (y de un fichero .env opcional)
"""

import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

APP_NAME = "gate-energetics"
APP_VERSION = "0.1.0"

_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


class Settings(BaseModel):
    """Ajustes globales del proceso (logging, entorno, paralelismo)"""

    log_level: str = "INFO"
    log_to_file: bool = False
    log_file_path: str = "gate_energetics.log"
    environment: Optional[str] = None
    app_version: str = APP_VERSION
    sweep_workers: int = Field(default=1, ge=1)

    @field_validator("log_level")
    @classmethod
    def _check_level(cls, value: str) -> str:
        value = value.upper()
        if value not in _LEVELS:
            raise ValueError(f"unknown log level {value!r}")
        return value

    @classmethod
    def from_env(cls) -> "Settings":
        """Construir los ajustes a partir de variables de entorno"""
        load_dotenv(override=False)
        raw = {
            "log_level": os.getenv("LOG_LEVEL"),
            "log_to_file": os.getenv("LOG_TO_FILE"),
            "log_file_path": os.getenv("LOG_FILE_PATH"),
            "environment": os.getenv("ENVIRONMENT"),
            "app_version": os.getenv("APP_VERSION"),
            "sweep_workers": os.getenv("SWEEP_WORKERS"),
        }
        return cls(**{key: value for key, value in raw.items() if value is not None})


# Singleton para uso global
_settings = None


def get_settings() -> Settings:
    """Obtener instancia singleton de los ajustes"""
    global _settings

    if _settings is None:
        _settings = Settings.from_env()

    return _settings


def reset_settings() -> None:
    """Olvidar los ajustes cacheados (tests y CLI)"""
    global _settings
    _settings = None

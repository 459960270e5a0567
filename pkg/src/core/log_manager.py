"""
Gate Energetics - Log Manager
Sistema de logging estructurado para las simulaciones y los análisis
"""

import json
import logging
import math
from datetime import datetime
from typing import Any, Dict, Optional

from pythonjsonlogger import jsonlogger

from core.settings import APP_NAME, get_settings

ROOT_LOGGER = "gate_energetics"


class StructuredLogger:
    """Logger estructurado para gate-energetics"""

    def __init__(self, name: str = ROOT_LOGGER):
        self.name = name
        self.logger = logging.getLogger(name)
        self._setup_logger()

    def _setup_logger(self):
        """Configurar el logger con formato JSON"""
        settings = get_settings()

        # Eliminar handlers existentes
        self.logger.handlers.clear()
        self.logger.setLevel(getattr(logging, settings.log_level))
        self.logger.propagate = False

        formatter = jsonlogger.JsonFormatter(
            '%(asctime)s %(levelname)s %(name)s %(message)s %(module)s %(funcName)s %(lineno)d'
        )

        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        self.logger.addHandler(console_handler)

        if settings.log_to_file:
            file_handler = logging.FileHandler(settings.log_file_path)
            file_handler.setFormatter(formatter)
            self.logger.addHandler(file_handler)

    def log_event(self, level: str, event: str, details: Dict[str, Any],
                  context: Optional[Dict[str, Any]] = None):
        """
        Registrar evento estructurado

        Args:
            level: Nivel de log (DEBUG, INFO, WARNING, ERROR, CRITICAL)
            event: Tipo de evento
            details: Detalles del evento
            context: Contexto adicional
        """
        settings = get_settings()
        log_data = {
            'timestamp': datetime.utcnow().isoformat(),
            'level': level.upper(),
            'event': event,
            'details': details,
            'context': context or {},
            'system': APP_NAME,
            'version': settings.app_version,
        }

        if settings.environment:
            log_data['environment'] = settings.environment

        numeric_level = getattr(logging, level.upper(), logging.INFO)
        self.logger.log(numeric_level, json.dumps(log_data, default=str))

    def debug(self, event: str, details: Dict[str, Any], context: Optional[Dict[str, Any]] = None):
        self.log_event('DEBUG', event, details, context)

    def info(self, event: str, details: Dict[str, Any], context: Optional[Dict[str, Any]] = None):
        self.log_event('INFO', event, details, context)

    def warning(self, event: str, details: Dict[str, Any], context: Optional[Dict[str, Any]] = None):
        self.log_event('WARNING', event, details, context)

    def error(self, event: str, details: Dict[str, Any], context: Optional[Dict[str, Any]] = None):
        self.log_event('ERROR', event, details, context)

    def critical(self, event: str, details: Dict[str, Any], context: Optional[Dict[str, Any]] = None):
        self.log_event('CRITICAL', event, details, context)

    def log_propagation(self, direction: str, n_steps: int, dt: float,
                        batch: int = 1, failures: int = 0):
        """
        Loggear una propagación hacia delante o hacia atrás

        Args:
            direction: "forward" o "backward"
            n_steps: Número de pasos RK4
            dt: Paso temporal en segundos
            batch: Número de pulsos integrados a la vez
            failures: Elementos del lote que perdieron positividad
        """
        self.debug(
            event="propagation",
            details={
                "direction": direction,
                "n_steps": n_steps,
                "dt_s": dt,
                "batch": batch,
                "failures": failures,
            }
        )

    def log_sweep_point(self, theta: float, summary: Dict[str, Any]):
        """Loggear un punto de barrido en theta"""
        self.debug(
            event="sweep_point",
            details={"theta_over_pi": theta / math.pi, **summary}
        )

    def log_fit_result(self, kind: str, parameters: Dict[str, Any], residual: float):
        """
        Loggear el resultado de un ajuste

        Args:
            kind: Tipo de ajuste (reflection, conditional_model, gmm)
            parameters: Parámetros ajustados
            residual: Residuo final
        """
        self.info(
            event="fit_result",
            details={"kind": kind, "parameters": parameters, "residual": residual}
        )

    def log_classification(self, summary: Dict[str, Any]):
        """Loggear el resumen de una clasificación de lecturas IQ"""
        self.info(event="classification", details=summary)


# Singleton para uso global
_log_manager = None


def get_log_manager() -> StructuredLogger:
    """Obtener instancia singleton del gestor de logs"""
    global _log_manager

    if _log_manager is None:
        _log_manager = StructuredLogger()

    return _log_manager

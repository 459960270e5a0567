"""
Gate Energetics - Error Processor
Jerarquía de excepciones del motor y conversión a registros estructurados
"""

import logging
import uuid
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

logger = logging.getLogger("gate_energetics.error_processor")


class ErrorSeverity(Enum):
    CRITICAL = "critical"
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


class ErrorCategory(Enum):
    VALIDATION = "validation"
    NUMERICAL = "numerical"
    POSTSELECTION = "postselection"
    CONVERGENCE = "convergence"
    CONFIGURATION = "configuration"
    IO = "io"
    RUNTIME = "runtime"


class GateEnergeticsError(Exception):
    """Error base del paquete"""

    category = ErrorCategory.RUNTIME
    severity = ErrorSeverity.HIGH

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details


class ValidationError(GateEnergeticsError, ValueError):
    """Precondición o invariante de tipo violado"""

    category = ErrorCategory.VALIDATION
    severity = ErrorSeverity.MEDIUM


class PropagationError(GateEnergeticsError):
    """Pérdida de positividad durante la integración"""

    category = ErrorCategory.NUMERICAL

    def __init__(self, message: str, step: int, dt: float, **details: Any):
        super().__init__(message, step=step, dt=dt, **details)
        self.step = step
        self.dt = dt


class PostselectionError(GateEnergeticsError):
    """Post-selección incompatible: Tr[E rho] nulo"""

    category = ErrorCategory.POSTSELECTION


class ConvergenceError(GateEnergeticsError):
    category = ErrorCategory.CONVERGENCE


class TruncationError(GateEnergeticsError):
    category = ErrorCategory.NUMERICAL
    severity = ErrorSeverity.MEDIUM


class ConfigurationError(GateEnergeticsError):
    category = ErrorCategory.CONFIGURATION
    severity = ErrorSeverity.MEDIUM


class InputFileError(GateEnergeticsError):
    """Fichero de entrada ausente o mal formado"""

    category = ErrorCategory.IO
    severity = ErrorSeverity.MEDIUM

    def __init__(self, message: str, path: str, **details: Any):
        super().__init__(message, path=path, **details)
        self.path = path


class ErrorProcessor:
    """Procesador de errores: excepción -> registro estructurado"""

    def __init__(self):
        self.action_rules = self._initialize_action_rules()

    def _initialize_action_rules(self) -> Dict[ErrorCategory, List[str]]:
        """Inicializar acciones sugeridas por categoría"""
        return {
            ErrorCategory.VALIDATION: ["check_input_ranges"],
            ErrorCategory.NUMERICAL: ["reduce_step_size", "increase_truncation"],
            ErrorCategory.POSTSELECTION: ["check_terminal_effect", "check_fidelities"],
            ErrorCategory.CONVERGENCE: ["change_seed", "improve_initial_guess", "raise_max_iter"],
            ErrorCategory.CONFIGURATION: ["check_config_keys"],
            ErrorCategory.IO: ["check_input_path"],
            ErrorCategory.RUNTIME: ["review_manually"],
        }

    def process_error(self, error: BaseException,
                      context: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Procesar una excepción y extraer información estructurada

        Args:
            error: Excepción capturada
            context: Contexto adicional (p. ej. el ángulo theta de un barrido)

        Returns:
            Registro estructurado del error
        """
        if isinstance(error, GateEnergeticsError):
            category = error.category
            severity = error.severity
            details = dict(error.details)
            message = error.message
        else:
            category = ErrorCategory.RUNTIME
            severity = ErrorSeverity.HIGH
            details = {}
            message = str(error)

        record = {
            "id": self._generate_error_id(),
            "type": type(error).__name__,
            "message": message,
            "category": category.value,
            "severity": severity.value,
            "timestamp": datetime.now().isoformat(),
            "details": details,
            "context": context or {},
            "suggested_actions": list(self.action_rules[category]),
        }

        logger.info(f"Error procesado: {record['id']} - {record['type']}")
        return record

    def _generate_error_id(self) -> str:
        """Generar ID único para el error"""
        return f"err_{uuid.uuid4().hex[:8]}_{int(datetime.now().timestamp())}"

    def exit_code(self, error: BaseException) -> int:
        """Código de salida de la CLI asociado a una excepción"""
        if isinstance(error, InputFileError):
            return 2
        return 1


# Singleton para uso global
_error_processor = None


def get_error_processor() -> ErrorProcessor:
    """Obtener instancia singleton del procesador de errores"""
    global _error_processor

    if _error_processor is None:
        _error_processor = ErrorProcessor()

    return _error_processor

"""
Gate Energetics - Configuración de ejecución
Fichero YAML clave-valor con las constantes del experimento, rangos de
barrido, semillas y convenciones; las opciones de la CLI lo sobrescriben.
"""

import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError

from core.dynamics import DEFAULT_STEPS, ExperimentConstants, QubitRates
from core.energetics import PulseSetup
from core.error_processor import ConfigurationError, InputFileError
from core.toy_model import PhaseConvention

logger = logging.getLogger("gate_energetics.run_config")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SweepConfig(_Section):
    theta_max: float = Field(default=6 * math.pi, ge=0)
    steps: int = Field(default=121, ge=1)
    n_steps: int = Field(default=DEFAULT_STEPS, ge=16)
    chunk_size: int = Field(default=16, ge=1)


class DynamicsConfig(_Section):
    decoherence: bool = True
    theta: float = Field(default=math.pi, ge=0)


class ToyConfig(_Section):
    convention: PhaseConvention = PhaseConvention.ROTATION
    theta: float = Field(default=1.6 * math.pi, gt=0)
    backaction_theta_min: float = Field(default=0.25 * math.pi, gt=0)
    backaction_theta_max: float = Field(default=16 * math.pi, gt=0)
    backaction_steps: int = Field(default=64, ge=1)


class ReadoutConfig(_Section):
    radius_factor: float = Field(default=1.5, gt=0)
    p_outcome_given_state_g: Optional[float] = Field(default=None, gt=0, le=1)
    p_outcome_given_state_e: Optional[float] = Field(default=None, gt=0, le=1)
    k: int = Field(default=3, ge=1, le=3)
    max_iter: int = Field(default=500, ge=1)
    tol: float = Field(default=1e-9, gt=0)
    sigma_iq: float = Field(default=1e-3, gt=0)
    samples: int = Field(default=100_000, ge=100)
    transit_fraction: float = Field(default=0.12, ge=0, lt=1)


class ReflectionConfig(_Section):
    omega_a: float = Field(default=2 * math.pi * 20e3, gt=0)
    init_gamma_a: float = Field(default=2 * math.pi * 15e3, gt=0)
    init_omega_a: float = Field(default=2 * math.pi * 25e3, gt=0)
    points: int = Field(default=101, ge=8)
    span: float = Field(default=25.0, gt=0)
    noise: float = Field(default=0.0, ge=0)


class PowerConfig(_Section):
    gain: float = Field(default=2e-17, gt=0)
    p_vac: float = Field(default=1e-12, ge=0)
    p_c: float = Field(default=5e-14, ge=0)


class RunConfig(_Section):
    constants: ExperimentConstants = Field(default_factory=ExperimentConstants)
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    toy: ToyConfig = Field(default_factory=ToyConfig)
    readout: ReadoutConfig = Field(default_factory=ReadoutConfig)
    reflection: ReflectionConfig = Field(default_factory=ReflectionConfig)
    power: PowerConfig = Field(default_factory=PowerConfig)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    delay_ns: float = 0.0
    out: Optional[str] = None

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "RunConfig":
        """
        Cargar la configuración desde un fichero YAML

        Args:
            path: Ruta del fichero; None devuelve los valores por defecto

        Returns:
            RunConfig validada (las claves desconocidas se rechazan)
        """
        if path is None:
            return cls()
        path = Path(path)
        if not path.is_file():
            raise InputFileError(f"config file not found: {path}", path=str(path))
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"invalid YAML in {path}: {exc}", path=str(path))
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path} must hold a key-value mapping", path=str(path))
        config = cls.from_mapping(raw, source=str(path))
        logger.info(f"Configuración cargada desde {path}")
        return config

    @classmethod
    def from_mapping(cls, raw: dict, source: str = "<mapping>") -> "RunConfig":
        try:
            return cls.model_validate(raw)
        except PydanticValidationError as exc:
            first = exc.errors()[0]
            key = ".".join(str(part) for part in first["loc"])
            raise ConfigurationError(f"{source}: {key}: {first['msg']}", key=key, source=source)

    def with_overrides(self, seed: Optional[int] = None, delay_ns: Optional[float] = None,
                       out: Optional[str] = None, theta_max: Optional[float] = None,
                       steps: Optional[int] = None) -> "RunConfig":
        """Copia con las opciones de la línea de órdenes aplicadas"""
        data = self.model_dump()
        for key, value in (("seed", seed), ("delay_ns", delay_ns), ("out", out)):
            if value is not None:
                data[key] = value
        if theta_max is not None:
            data["sweep"]["theta_max"] = theta_max
        if steps is not None:
            data["sweep"]["steps"] = steps
        return RunConfig.from_mapping(data, source="command line")

    def rates(self) -> QubitRates:
        if not self.dynamics.decoherence:
            return QubitRates.ideal()
        return QubitRates.from_constants(self.constants)

    def setup(self) -> PulseSetup:
        return PulseSetup.from_constants(self.constants, self.sweep.n_steps)

    @property
    def gamma_a_t_d(self) -> float:
        return self.constants.gamma_a * self.constants.t_d

    def p_outcome_given_state(self) -> Optional[Dict[str, float]]:
        """P("x"|x) externos; None si no hay ninguno y se estiman con la mezcla"""
        values = {"g": self.readout.p_outcome_given_state_g, "e": self.readout.p_outcome_given_state_e}
        values = {label: p for label, p in values.items() if p is not None}
        return values or None

    def backaction_thetas(self) -> List[float]:
        toy = self.toy
        if toy.backaction_steps == 1:
            return [toy.backaction_theta_max]
        step = (toy.backaction_theta_max - toy.backaction_theta_min) / (toy.backaction_steps - 1)
        return [toy.backaction_theta_min + i * step for i in range(toy.backaction_steps)]

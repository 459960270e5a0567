"""
Gate Energetics - Ajuste
Modelo estacionario de Bloch para el coeficiente de reflexión y extracción de
Gamma_a y Omega_a por Levenberg-Marquardt.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.dynamics import ExperimentConstants
from core.error_processor import ConvergenceError, ValidationError
from core.log_manager import get_log_manager

logger = logging.getLogger("gate_energetics.fitting")

LM_LAMBDA0 = 1e-3
LM_LAMBDA_MAX = 1e16
STEP_TOL = 1e-10
GRADIENT_TOL = 1e-12
MAX_ITER = 500
FAR_DETUNED_FRACTION = 0.1


@dataclass(frozen=True)
class ReflectionPoint:
    delta: float
    r: complex

    def __post_init__(self):
        if not (math.isfinite(self.delta) and np.isfinite(self.r)):
            raise ValidationError("reflection point must be finite", delta=self.delta)


@dataclass(frozen=True)
class BlochParams:
    gamma_1: float
    gamma_2: float
    gamma_a: float
    omega_a: float
    p_g_th: float
    p_e_th: float

    def __post_init__(self):
        if min(self.gamma_1, self.gamma_2, self.gamma_a) <= 0:
            raise ValidationError("rates must be positive",
                                  gamma_1=self.gamma_1, gamma_2=self.gamma_2, gamma_a=self.gamma_a)
        if self.omega_a < 0:
            raise ValidationError("omega_a must be non-negative", omega_a=self.omega_a)
        if self.gamma_2 < 0.5 * self.gamma_1 * (1.0 - 1e-12):
            raise ValidationError("gamma_2 below gamma_1/2", gamma_1=self.gamma_1, gamma_2=self.gamma_2)

    @classmethod
    def from_constants(cls, constants: ExperimentConstants, omega_a: float,
                       gamma_a: Optional[float] = None) -> "BlochParams":
        return cls(
            gamma_1=1.0 / constants.T1,
            gamma_2=constants.gamma_2,
            gamma_a=constants.gamma_a if gamma_a is None else gamma_a,
            omega_a=omega_a,
            p_g_th=constants.p_g_th,
            p_e_th=constants.p_e_th,
        )

    def with_drive(self, gamma_a: float, omega_a: float) -> "BlochParams":
        return BlochParams(self.gamma_1, self.gamma_2, gamma_a, omega_a, self.p_g_th, self.p_e_th)

    @property
    def polarization(self) -> float:
        return self.p_g_th - self.p_e_th

    @property
    def alpha_in(self) -> float:
        """Amplitud entrante alpha_in = Omega_a / (2 sqrt(Gamma_a))"""
        return self.omega_a / (2.0 * math.sqrt(self.gamma_a))


@dataclass
class LMResult:
    x: NDArray[np.float64]
    cost: float
    jacobian: NDArray[np.float64]
    residual: NDArray[np.float64]
    n_iter: int
    cost_history: List[float] = field(default_factory=list)


@dataclass
class ReflectionFit:
    gamma_a: float
    omega_a: float
    sigma_gamma_a: float
    sigma_omega_a: float
    residual: float
    n_iter: int
    covariance: NDArray[np.float64]
    cost_history: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "gamma_a": self.gamma_a,
            "omega_a": self.omega_a,
            "gamma_a_over_2pi_hz": self.gamma_a / (2.0 * math.pi),
            "omega_a_over_2pi_hz": self.omega_a / (2.0 * math.pi),
            "sigma_gamma_a": self.sigma_gamma_a,
            "sigma_omega_a": self.sigma_omega_a,
            "residual": self.residual,
            "n_iter": self.n_iter,
        }


# --- modelo ------------------------------------------------------------------

def _denominator(params: BlochParams, delta):
    return params.gamma_1 * (params.gamma_2 ** 2 + delta ** 2) + params.gamma_2 * params.omega_a ** 2


def steady_state_sigma_minus(params: BlochParams, delta: ArrayLike):
    """<sigma_-> estacionario de las ecuaciones de Bloch con drive resonante desintonizado delta"""
    delta = np.asarray(delta, dtype=float)
    value = (params.polarization * params.omega_a * params.gamma_1 * (params.gamma_2 - 1j * delta)
             / (2.0 * _denominator(params, delta)))
    return complex(value) if value.ndim == 0 else value


def reflection_model(params: BlochParams, delta: ArrayLike):
    """R(delta) = 1 - (p_g - p_e) Gamma_a Gamma_1 (Gamma_2 - i delta) / D(delta)"""
    delta = np.asarray(delta, dtype=float)
    value = 1.0 - (params.polarization * params.gamma_a * params.gamma_1 * (params.gamma_2 - 1j * delta)
                   / _denominator(params, delta))
    return complex(value) if value.ndim == 0 else value


def reflection_sweep(params: BlochParams, deltas: Sequence[float]) -> NDArray[np.complex128]:
    return np.atleast_1d(reflection_model(params, np.asarray(deltas, dtype=float)))


def normalize_far_detuned(deltas: ArrayLike, values: ArrayLike) -> NDArray[np.complex128]:
    """Dividir por la media de los valores del 10 % de puntos con mayor |delta|"""
    deltas = np.asarray(deltas, dtype=float)
    values = np.asarray(values, dtype=complex)
    count = max(1, int(math.ceil(FAR_DETUNED_FRACTION * deltas.size)))
    far = np.argsort(-np.abs(deltas), kind="stable")[:count]
    reference = values[far].mean()
    if abs(reference) == 0:
        raise ValidationError("far-detuned reference vanishes")
    return values / reference


# --- Levenberg-Marquardt -------------------------------------------------------

def _jacobian(residual_fn: Callable, x: NDArray, step: float = 1e-6) -> NDArray:
    columns = []
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        up, down = x.copy(), x.copy()
        up[j] += h
        down[j] -= h
        columns.append((residual_fn(up) - residual_fn(down)) / (2.0 * h))
    return np.column_stack(columns)


def levenberg_marquardt(residual_fn: Callable[[NDArray], NDArray], x0: ArrayLike,
                        max_iter: int = MAX_ITER) -> LMResult:
    """
    Minimizar sum(r(x)^2) con Levenberg-Marquardt

    Amortiguamiento de Marquardt (diagonal de J^T J), lambda inicial 1e-3,
    x10 al rechazar un paso y /10 al aceptarlo. Jacobiano por diferencias
    centradas.

    Args:
        residual_fn: Vector de residuos reales r(x)
        x0: Punto inicial
        max_iter: Iteraciones máximas

    Returns:
        LMResult con el historial de coste de los pasos aceptados
    """
    x = np.asarray(x0, dtype=float).copy()
    r = residual_fn(x)
    cost = float(r @ r)
    history = [cost]
    lam = LM_LAMBDA0

    for iteration in range(1, max_iter + 1):
        J = _jacobian(residual_fn, x)
        gradient = J.T @ r
        if np.linalg.norm(gradient, np.inf) < GRADIENT_TOL:
            return LMResult(x, cost, J, r, iteration, history)

        A = J.T @ J
        scale = np.maximum(np.diag(A), 1e-300)
        while True:
            step = np.linalg.solve(A + lam * np.diag(scale), -gradient)
            x_new = x + step
            r_new = residual_fn(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > LM_LAMBDA_MAX:
                # ningún paso reduce el coste: mínimo a precisión de máquina
                return LMResult(x, cost, J, r, iteration, history)

        x, r, cost = x_new, r_new, cost_new
        history.append(cost)
        if np.linalg.norm(step) < STEP_TOL * (np.linalg.norm(x) + STEP_TOL):
            return LMResult(x, cost, _jacobian(residual_fn, x), r, iteration, history)

    raise ConvergenceError("Levenberg-Marquardt did not converge", max_iter=max_iter, cost=cost)


def fit_reflection(points: Sequence[ReflectionPoint], fixed: BlochParams,
                   init_gamma_a: float, init_omega_a: float,
                   max_iter: int = MAX_ITER) -> ReflectionFit:
    """
    Ajustar Gamma_a y Omega_a a un espectro de reflexión

    Datos y modelo se normalizan por sus puntos más desintonizados, lo que
    elimina la escala compleja de la cadena de medida. Los parámetros se
    optimizan en escala logarítmica para mantenerlos positivos.

    Args:
        points: Puntos (delta, R) medidos
        fixed: Gamma_1, Gamma_2 y poblaciones térmicas (gamma_a y omega_a se ignoran)
        init_gamma_a: Valor inicial de Gamma_a
        init_omega_a: Valor inicial de Omega_a
        max_iter: Iteraciones máximas

    Returns:
        ReflectionFit con incertidumbres 1 sigma por la covarianza
    """
    if len(points) < 8:
        raise ValidationError("need at least 8 reflection points", points=len(points))
    if init_gamma_a <= 0 or init_omega_a <= 0:
        raise ValidationError("initial guesses must be positive")
    deltas = np.array([p.delta for p in points], dtype=float)
    if np.abs(deltas).max() < 10.0 * fixed.gamma_2:
        raise ValidationError("detuning must reach at least 10 gamma_2",
                              max_delta=float(np.abs(deltas).max()), gamma_2=fixed.gamma_2)
    data = normalize_far_detuned(deltas, np.array([p.r for p in points], dtype=complex))

    def residual_fn(log_params: NDArray) -> NDArray:
        gamma_a, omega_a = np.exp(log_params)
        model = normalize_far_detuned(deltas, reflection_sweep(fixed.with_drive(gamma_a, omega_a), deltas))
        diff = model - data
        return np.concatenate([diff.real, diff.imag])

    result = levenberg_marquardt(residual_fn, np.log([init_gamma_a, init_omega_a]), max_iter)
    gamma_a, omega_a = np.exp(result.x)

    dof = max(result.residual.size - 2, 1)
    s2 = result.cost / dof
    covariance = s2 * np.linalg.pinv(result.jacobian.T @ result.jacobian)
    sigma_log = np.sqrt(np.maximum(np.diag(covariance), 0.0))
    fit = ReflectionFit(
        gamma_a=float(gamma_a),
        omega_a=float(omega_a),
        sigma_gamma_a=float(gamma_a * sigma_log[0]),
        sigma_omega_a=float(omega_a * sigma_log[1]),
        residual=float(math.sqrt(result.cost / result.residual.size)),
        n_iter=result.n_iter,
        covariance=covariance,
        cost_history=result.cost_history,
    )
    get_log_manager().log_fit_result("reflection", fit.to_dict(), fit.residual)
    return fit

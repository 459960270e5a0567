"""
Gate Energetics - Modelo de juguete
El pulso de drive como oscilador estacionario medido por un qubit sin
decoherencia: operadores de medida de Jaynes-Cummings, distribuciones de
fotones post-seleccionadas, descomposición de la retroacción y análisis
bayesiano de un clic de fotodetector.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln

from core.dynamics import Postselect, QubitRates
from core.energetics import PulseSetup, delta_n_sweep, purity_bound
from core.error_processor import PostselectionError, TruncationError, ValidationError

logger = logging.getLogger("gate_energetics.toy_model")

UNDEFINED_FLOOR = 1e-12
TAIL_WIDTH = 10


class PhaseConvention(str, Enum):
    """
    ROTATION: M_g = cos(phi_n/2), M_e = e sin(phi_n/2), con phi_n = sqrt(4 Gamma_a t_d n)
    el ángulo de Rabi semiclásico del n-ésimo estado de Fock.
    MAIN_TEXT: cos(phi_n) y sin(phi_n) literalmente.
    """

    ROTATION = "rotation"
    MAIN_TEXT = "main_text"


@dataclass
class FockVector:
    amplitudes: NDArray[np.complex128]

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim != 1 or self.amplitudes.size == 0:
            raise ValidationError("Fock amplitudes must be a non-empty vector")

    @classmethod
    def fock(cls, m: int, n_max: int) -> "FockVector":
        if not 0 <= m <= n_max:
            raise ValidationError("Fock index outside truncation", m=m, n_max=n_max)
        amplitudes = np.zeros(n_max + 1, dtype=complex)
        amplitudes[m] = 1.0
        return cls(amplitudes)

    @property
    def n_max(self) -> int:
        return self.amplitudes.size - 1

    @property
    def numbers(self) -> NDArray[np.int64]:
        return np.arange(self.amplitudes.size)

    @property
    def probabilities(self) -> NDArray[np.float64]:
        return np.abs(self.amplitudes) ** 2

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.probabilities.sum()))

    @property
    def mean_n(self) -> float:
        p = self.probabilities
        return float(np.dot(self.numbers, p) / p.sum())

    def tail_mass(self, width: int = TAIL_WIDTH) -> float:
        return float(self.probabilities[max(self.n_max - width + 1, 0):].sum())

    def normalized(self) -> "FockVector":
        return FockVector(self.amplitudes / self.norm)

    def overlap(self, other: "FockVector") -> complex:
        """<self|other>"""
        return complex(np.vdot(self.amplitudes, other.amplitudes))


@dataclass(frozen=True)
class ToyParams:
    gamma_a_t_d: float
    n_in: float
    convention: PhaseConvention = PhaseConvention.ROTATION

    def __post_init__(self):
        if self.gamma_a_t_d <= 0:
            raise ValidationError("Gamma_a t_d must be positive", gamma_a_t_d=self.gamma_a_t_d)
        if self.n_in < 0:
            raise ValidationError("n_in must be non-negative", n_in=self.n_in)

    @classmethod
    def from_theta(cls, theta: float, gamma_a_t_d: float,
                   convention: PhaseConvention = PhaseConvention.ROTATION) -> "ToyParams":
        if gamma_a_t_d <= 0:
            raise ValidationError("Gamma_a t_d must be positive", gamma_a_t_d=gamma_a_t_d)
        return cls(gamma_a_t_d, theta ** 2 / (4.0 * gamma_a_t_d), PhaseConvention(convention))

    @property
    def theta(self) -> float:
        return math.sqrt(4.0 * self.gamma_a_t_d * self.n_in)

    def phase(self, n: ArrayLike) -> NDArray[np.float64]:
        """phi_n = sqrt(4 Gamma_a t_d n)"""
        return np.sqrt(4.0 * self.gamma_a_t_d * np.asarray(n, dtype=float))

    def angle(self, n: ArrayLike) -> NDArray[np.float64]:
        """Argumento de cos/sin en M_g, M_e según la convención"""
        if self.convention is PhaseConvention.ROTATION:
            return 0.5 * self.phase(n)
        return self.phase(n)


@dataclass
class MeasurementOutcome:
    label: Postselect
    probability: float
    post_state: Optional[FockVector]

    @property
    def defined(self) -> bool:
        return self.post_state is not None

    @property
    def mean_n(self) -> float:
        return self.post_state.mean_n if self.defined else float("nan")


@dataclass
class ToyBudget:
    theta: float
    n_in: float
    p_g: float
    p_e: float
    mean_n_g: float
    mean_n_e: float

    @property
    def dn_g(self) -> float:
        return self.mean_n_g - self.n_in

    @property
    def dn_e(self) -> float:
        return self.mean_n_e - self.n_in

    @property
    def dn_none(self) -> float:
        # dn_e ya incluye el fotón absorbido por el qubit
        return self.p_g * self.dn_g + self.p_e * self.dn_e

    def conservation_residual(self) -> float:
        return self.n_in - self.p_g * self.mean_n_g - self.p_e * (self.mean_n_e + 1.0)


@dataclass
class BackactionPoint:
    theta: float
    dn_g: float
    dn_e_shifted_rescaled: float

    @property
    def difference(self) -> float:
        return self.dn_e_shifted_rescaled - self.dn_g


@dataclass
class ClickUpdate:
    will_click: NDArray[np.float64]
    posterior: NDArray[np.float64]


@dataclass
class JCColumn:
    """Columna |g> del unitario JC: lambda_g |g>|psi_g> + lambda_e |e>|psi_e>"""

    lambda_g: float
    lambda_e: float
    psi_g: Optional[FockVector]
    psi_e: Optional[FockVector]

    @property
    def overlap(self) -> complex:
        if self.psi_g is None or self.psi_e is None:
            return 0.0
        return self.psi_e.overlap(self.psi_g)

    def purity(self) -> float:
        return purity_bound(self.lambda_g, self.lambda_e, self.overlap)


def truncation_for(n_in: float) -> int:
    """N_max = ceil(n_in + 10 sqrt(n_in + 1) + 30)"""
    return int(math.ceil(n_in + 10.0 * math.sqrt(n_in + 1.0) + 30.0))


def poisson_prior(n_in: float, n_max: int) -> NDArray[np.float64]:
    """Probabilidades de Poisson truncadas y renormalizadas"""
    return np.abs(coherent_state(n_in, n_max).amplitudes) ** 2


def coherent_state(n_in: float, n_max: Optional[int] = None) -> FockVector:
    """
    Estado coherente |sqrt(n_in)> truncado en n_max

    Las amplitudes se calculan en escala logarítmica para evitar el
    desbordamiento de n! por encima de n ~ 170.
    """
    if n_in < 0:
        raise ValidationError("n_in must be non-negative", n_in=n_in)
    if n_max is None:
        n_max = truncation_for(n_in)
    if n_max < n_in + 8.0 * math.sqrt(n_in) + 20.0:
        raise TruncationError("truncation too small for coherent state",
                              n_in=n_in, n_max=n_max, required=n_in + 8.0 * math.sqrt(n_in) + 20.0)
    if n_in == 0:
        return FockVector.fock(0, n_max)

    n = np.arange(n_max + 1)
    log_c = -0.5 * n_in + 0.5 * n * math.log(n_in) - 0.5 * gammaln(n + 1)
    amplitudes = np.exp(log_c)
    amplitudes /= np.linalg.norm(amplitudes)
    return FockVector(amplitudes.astype(complex))


def _outcome(label: Postselect, amplitudes: NDArray) -> MeasurementOutcome:
    probability = float(np.sum(np.abs(amplitudes) ** 2))
    if probability <= UNDEFINED_FLOOR:
        return MeasurementOutcome(label, probability, None)
    return MeasurementOutcome(label, probability, FockVector(amplitudes / math.sqrt(probability)))


def measurement_operators(params: ToyParams,
                          psi: FockVector) -> Tuple[MeasurementOutcome, MeasurementOutcome]:
    """
    Aplicar M_g y M_e al estado del oscilador

    M_g es diagonal; M_e multiplica por sin y después baja n en uno con el
    operador de bajada desnudo e = sum |n><n+1|.

    Returns:
        (resultado g, resultado e); un resultado con probabilidad nula
        lleva post_state = None
    """
    if abs(psi.norm - 1.0) > 1e-9:
        raise ValidationError("psi must be normalized", norm=psi.norm)
    angle = params.angle(psi.numbers)
    amplitudes_g = np.cos(angle) * psi.amplitudes
    lowered = np.sin(angle) * psi.amplitudes
    amplitudes_e = np.zeros_like(psi.amplitudes)
    amplitudes_e[:-1] = lowered[1:]
    return _outcome(Postselect.G, amplitudes_g), _outcome(Postselect.E, amplitudes_e)


def postselected_distribution(params: ToyParams, psi: FockVector,
                              outcome: Union[str, Postselect]) -> NDArray[np.float64]:
    outcome = Postselect(outcome)
    if outcome is Postselect.NONE:
        return psi.probabilities / psi.norm ** 2
    g, e = measurement_operators(params, psi)
    selected = g if outcome is Postselect.G else e
    if not selected.defined:
        raise PostselectionError("outcome has zero probability",
                                 outcome=outcome.value, probability=selected.probability)
    return selected.post_state.probabilities


def delta_n_toy(theta: float, gamma_a_t_d: float,
                convention: PhaseConvention = PhaseConvention.ROTATION) -> ToyBudget:
    """
    Cambio medio del número de fotones del pulso según el resultado del qubit

    Args:
        theta: Ángulo de rotación (rad), > 0
        gamma_a_t_d: Producto adimensional Gamma_a t_d
        convention: Convención de fase de M_g, M_e

    Returns:
        ToyBudget con P(g), P(e) y los números medios post-seleccionados
    """
    if theta <= 0:
        raise ValidationError("theta must be positive", theta=theta)
    params = ToyParams.from_theta(theta, gamma_a_t_d, convention)
    psi = coherent_state(params.n_in)
    if psi.tail_mass() > 1e-10:
        raise TruncationError("coherent state tail mass too large", tail=psi.tail_mass())
    g, e = measurement_operators(params, psi)
    return ToyBudget(
        theta=theta,
        n_in=params.n_in,
        p_g=g.probability,
        p_e=e.probability,
        mean_n_g=g.mean_n,
        mean_n_e=e.mean_n,
    )


def backaction_difference(theta_list: Sequence[float], gamma_a_t_d: Optional[float] = None,
                          convention: PhaseConvention = PhaseConvention.ROTATION,
                          rates: Optional[QubitRates] = None,
                          setup: Optional[PulseSetup] = None) -> List[BackactionPoint]:
    """
    Diferencia (theta/(theta+pi)) dn_e(theta+pi) - dn_g(theta)

    Con rates y setup los dos Delta n salen del modelo de valores débiles; si
    no, del modelo de juguete con gamma_a_t_d.
    """
    thetas = [float(theta) for theta in theta_list]
    if not thetas or min(thetas) <= 0:
        raise ValidationError("theta values must be positive")

    if rates is not None and setup is not None:
        sweep = delta_n_sweep(thetas + [theta + math.pi for theta in thetas], rates, setup)
        count = len(thetas)
        dn_g = [b.delta_n for b in sweep[Postselect.G][:count]]
        dn_e = [b.delta_n for b in sweep[Postselect.E][count:]]
    elif gamma_a_t_d is not None:
        dn_g = [delta_n_toy(theta, gamma_a_t_d, convention).dn_g for theta in thetas]
        dn_e = [delta_n_toy(theta + math.pi, gamma_a_t_d, convention).dn_e for theta in thetas]
    else:
        raise ValidationError("either gamma_a_t_d or (rates, setup) is required")

    return [
        BackactionPoint(theta, g, theta / (theta + math.pi) * e)
        for theta, g, e in zip(thetas, dn_g, dn_e)
    ]


def click_update(psi: FockVector) -> ClickUpdate:
    """
    Actualización bayesiana de un clic de fotodetector en dos pasos

    Returns:
        ClickUpdate con P(n | el clic ocurrirá) y P(n | el clic ha ocurrido)
    """
    weights = psi.numbers * psi.probabilities
    total = weights.sum()
    if total <= UNDEFINED_FLOOR:
        raise PostselectionError("click impossible: oscillator in vacuum")
    will_click = weights / total
    posterior = np.zeros_like(will_click)
    posterior[:-1] = will_click[1:]
    return ClickUpdate(will_click=will_click, posterior=posterior)


def jc_unitary_column(params: ToyParams, input_qubit: Union[str, Postselect],
                      psi: FockVector) -> JCColumn:
    if Postselect(input_qubit) is not Postselect.G:
        raise ValidationError("only the |g> column of the JC unitary is available")
    g, e = measurement_operators(params, psi)
    return JCColumn(
        lambda_g=math.sqrt(g.probability),
        lambda_e=math.sqrt(e.probability),
        psi_g=g.post_state,
        psi_e=e.post_state,
    )


def gate_error(theta: float, gamma_a_t_d: float,
               convention: PhaseConvention = PhaseConvention.ROTATION) -> float:
    """1 - Tr[rho^2] del qubit tras entrelazarse con el pulso coherente"""
    params = ToyParams.from_theta(theta, gamma_a_t_d, convention)
    column = jc_unitary_column(params, Postselect.G, coherent_state(params.n_in))
    return 1.0 - column.purity()


def distribution_table(theta: float, gamma_a_t_d: float,
                       convention: PhaseConvention = PhaseConvention.ROTATION) -> Dict[str, NDArray]:
    """Columnas n, p_prior, p_given_g, p_given_e"""
    params = ToyParams.from_theta(theta, gamma_a_t_d, convention)
    psi = coherent_state(params.n_in)
    g, e = measurement_operators(params, psi)
    undefined = np.full(psi.amplitudes.size, np.nan)
    return {
        "n": psi.numbers,
        "p_prior": psi.probabilities,
        "p_given_g": g.post_state.probabilities if g.defined else undefined,
        "p_given_e": e.post_state.probabilities if e.defined else undefined,
    }

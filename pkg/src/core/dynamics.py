"""
Gate Energetics - Dinámica
Propagación abierta del qubit: matriz densidad hacia delante, matriz efecto
hacia atrás, valores débiles y envolventes de pulso.

Base fija (|g>, |e>) con sigma_z|e> = +|e>. Marco rotante a omega_Q sin
desintonía; el término de drive es H/hbar = -(Omega(t)/2) sigma_y, de modo que
desde |g> el vector de Bloch gira hacia +x y d<sz>/dt = Omega <sx>.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.integrate import simpson
from scipy.special import erf

from core.error_processor import PostselectionError, PropagationError, ValidationError
from core.log_manager import get_log_manager

logger = logging.getLogger("gate_energetics.dynamics")

TWO_PI = 2.0 * math.pi

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-9
POSITIVITY_SLACK = 1e-9
WEAK_VALUE_FLOOR = 1e-12
DEFAULT_STEPS = 4096
AREA_POINTS = 8193

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, 1j], [-1j, 0]], dtype=complex)
SIGMA_Z = np.array([[-1, 0], [0, 1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e|
SIGMA_PLUS = SIGMA_MINUS.conj().T
PROJECTOR_G = np.diag([1.0, 0.0]).astype(complex)
PROJECTOR_E = np.diag([0.0, 1.0]).astype(complex)

DensityMatrix = NDArray[np.complex128]
EffectMatrix = NDArray[np.complex128]


class Postselect(str, Enum):
    NONE = "none"
    G = "g"
    E = "e"


class ExperimentConstants(BaseModel):
    """Constantes del experimento (valores publicados por defecto)"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega_q: float = Field(default=TWO_PI * 4.81e9, gt=0)
    omega_r: float = Field(default=TWO_PI * 7.69e9, gt=0)
    chi: float = Field(default=TWO_PI * 4.5e6, gt=0)
    kappa: float = Field(default=TWO_PI * 12e6, gt=0)
    anharmonicity: float = Field(default=TWO_PI * 150e6, gt=0)
    T1: float = Field(default=5.5e-6, gt=0)
    T_phi: float = Field(default=2.4e-6, gt=0)
    gamma_a: float = Field(default=TWO_PI * 20e3, gt=0)
    t_d: float = Field(default=400e-9, gt=0)
    t_ro: float = Field(default=704e-9, gt=0)
    w: float = Field(default=10e-9, gt=0)
    p_g_th: float = Field(default=0.892, gt=0, le=1)
    p_e_th: float = Field(default=0.088, ge=0, lt=0.5)
    p_f_th: float = Field(default=0.02, ge=0, le=1)
    F_g: float = Field(default=0.985, ge=0.5, le=1)
    F_e: float = Field(default=0.867, ge=0.5, le=1)
    P_gg0: float = Field(default=0.696, ge=0, le=1)
    P_ee0: float = Field(default=0.605, ge=0, le=1)

    @model_validator(mode="after")
    def _populations_sum_to_one(self) -> "ExperimentConstants":
        total = self.p_g_th + self.p_e_th + self.p_f_th
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"thermal populations sum to {total}, expected 1")
        return self

    @property
    def gamma_2(self) -> float:
        """Tasa de decoherencia transversal Gamma_1/2 + Gamma_phi"""
        return 0.5 / self.T1 + 1.0 / self.T_phi


@dataclass(frozen=True)
class QubitRates:
    """Tasas de Lindblad del qubit; gamma_a es la parte radiativa de gamma_1"""

    gamma_1: float
    gamma_phi: float
    gamma_a: float
    p_e_th: float
    p_g_th: Optional[float] = None

    def __post_init__(self):
        if self.p_g_th is None:
            object.__setattr__(self, "p_g_th", 1.0 - self.p_e_th)
        if min(self.gamma_1, self.gamma_phi, self.gamma_a) < 0:
            raise ValidationError("rates must be non-negative", rates=self._as_dict())
        if self.gamma_a > self.gamma_1:
            raise ValidationError("radiative rate gamma_a exceeds gamma_1", rates=self._as_dict())
        if not 0.0 <= self.p_e_th < 0.5:
            raise ValidationError("p_e_th must lie in [0, 0.5)", p_e_th=self.p_e_th)
        if self.p_g_th <= 0 or self.p_g_th + self.p_e_th > 1.0 + 1e-12:
            raise ValidationError("invalid thermal populations", rates=self._as_dict())

    def _as_dict(self) -> dict:
        return {
            "gamma_1": self.gamma_1,
            "gamma_phi": self.gamma_phi,
            "gamma_a": self.gamma_a,
            "p_e_th": self.p_e_th,
            "p_g_th": self.p_g_th,
        }

    @property
    def gamma_up(self) -> float:
        return self.p_e_th / (self.p_g_th + self.p_e_th) * self.gamma_1

    @property
    def gamma_down(self) -> float:
        return self.p_g_th / (self.p_g_th + self.p_e_th) * self.gamma_1

    @property
    def stationary_excited_population(self) -> float:
        return self.p_e_th / (self.p_g_th + self.p_e_th)

    @classmethod
    def from_constants(cls, constants: ExperimentConstants) -> "QubitRates":
        return cls(
            gamma_1=1.0 / constants.T1,
            gamma_phi=1.0 / constants.T_phi,
            gamma_a=constants.gamma_a,
            p_e_th=constants.p_e_th,
            p_g_th=constants.p_g_th,
        )

    @classmethod
    def ideal(cls) -> "QubitRates":
        """Qubit sin decoherencia ni emisión espontánea"""
        return cls(gamma_1=0.0, gamma_phi=0.0, gamma_a=0.0, p_e_th=0.0)


@dataclass(frozen=True)
class DriveSpec:
    """Pulso de bordes gaussianos; gamma_a es el acoplamiento del drive a la línea"""

    amplitude: float
    w: float
    t_d: float
    gamma_a: float

    def __post_init__(self):
        if self.w <= 0:
            raise ValidationError("edge width w must be positive", w=self.w)
        if self.t_d < 4 * self.w:
            raise ValidationError("t_d < 4w: Gaussian edges overlap", t_d=self.t_d, w=self.w)
        if self.amplitude < 0:
            raise ValidationError("amplitude must be non-negative", amplitude=self.amplitude)
        if self.gamma_a <= 0:
            raise ValidationError("drive coupling gamma_a must be positive", gamma_a=self.gamma_a)

    @classmethod
    def for_theta(cls, theta: float, gamma_a: float, t_d: float, w: float) -> "DriveSpec":
        amplitude = amplitude_for_theta(theta, gamma_a, t_d, w)
        return cls(amplitude=amplitude, w=w, t_d=t_d, gamma_a=gamma_a)

    @property
    def theta(self) -> float:
        return 2.0 * math.sqrt(self.gamma_a) * self.amplitude * envelope_area(self.t_d, self.w)

    def alpha_in(self, t: ArrayLike) -> Union[float, NDArray[np.float64]]:
        return pulse_envelope(self, t)

    def rabi(self, t: ArrayLike) -> Union[float, NDArray[np.float64]]:
        """Omega_a(t) = 2 sqrt(Gamma_a) alpha_in(t)"""
        return 2.0 * math.sqrt(self.gamma_a) * pulse_envelope(self, t)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n_steps: int = DEFAULT_STEPS

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValidationError("time grid needs t1 > t0", t0=self.t0, t1=self.t1)
        if self.n_steps < 16 or self.n_steps % 2:
            raise ValidationError("n_steps must be even and >= 16", n_steps=self.n_steps)

    @classmethod
    def for_pulse(cls, spec: DriveSpec, n_steps: int = DEFAULT_STEPS) -> "TimeGrid":
        return cls(0.0, spec.t_d, n_steps)

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def times(self) -> NDArray[np.float64]:
        return np.linspace(self.t0, self.t1, self.n_steps + 1)

    @property
    def half_times(self) -> NDArray[np.float64]:
        """Nodos y puntos medios: los instantes que muestrea RK4"""
        return np.linspace(self.t0, self.t1, 2 * self.n_steps + 1)


@dataclass
class Trajectory:
    """Serie temporal de matrices 2x2 sobre una TimeGrid"""

    times: NDArray[np.float64]
    matrices: NDArray[np.complex128]
    log_scale: NDArray[np.float64] = field(default=None)

    def __post_init__(self):
        if self.log_scale is None:
            self.log_scale = np.zeros(len(self.times))

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, index):
        return self.matrices[index]

    @property
    def final(self) -> NDArray[np.complex128]:
        return self.matrices[-1]

    def unscaled(self) -> NDArray[np.complex128]:
        """Matrices con el reescalado positivo deshecho"""
        return self.matrices * np.exp(self.log_scale)[:, None, None]


@dataclass
class BatchPropagation:
    """Resultado de integrar varios pulsos a la vez"""

    times: NDArray[np.float64]
    matrices: NDArray[np.complex128]
    log_scale: NDArray[np.float64]
    failures: List[Optional[PropagationError]]

    def trajectory(self, index: int) -> Trajectory:
        return Trajectory(self.times, self.matrices[index], self.log_scale[index])


# --- validación ---------------------------------------------------------

def _as_matrix(m: ArrayLike, name: str) -> NDArray[np.complex128]:
    m = np.asarray(m, dtype=complex)
    if m.shape[-2:] != (2, 2):
        raise ValidationError(f"{name} must be a 2x2 matrix", shape=m.shape)
    return m


def _min_eigenvalue(m: NDArray[np.complex128]) -> NDArray[np.float64]:
    a = m[..., 0, 0].real
    d = m[..., 1, 1].real
    b = m[..., 0, 1]
    return 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + np.abs(b) ** 2)


def _hermitian_deviation(m: NDArray[np.complex128]) -> float:
    return float(np.max(np.abs(m - np.swapaxes(m.conj(), -1, -2))))


def validate_density_matrix(rho: ArrayLike) -> DensityMatrix:
    rho = _as_matrix(rho, "rho")
    if _hermitian_deviation(rho) > HERMITIAN_TOL:
        raise ValidationError("density matrix is not Hermitian")
    trace = np.trace(rho, axis1=-2, axis2=-1).real
    if np.any(np.abs(trace - 1.0) > TRACE_TOL):
        raise ValidationError("density matrix trace differs from 1", trace=trace.tolist())
    if np.any(_min_eigenvalue(rho) < -POSITIVITY_SLACK):
        raise ValidationError("density matrix is not positive semidefinite")
    return rho


def validate_effect_matrix(effect: ArrayLike) -> EffectMatrix:
    effect = _as_matrix(effect, "E")
    if _hermitian_deviation(effect) > HERMITIAN_TOL:
        raise ValidationError("effect matrix is not Hermitian")
    if np.any(_min_eigenvalue(effect) < -POSITIVITY_SLACK):
        raise ValidationError("effect matrix is not positive semidefinite")
    return effect


# --- envolvente -----------------------------------------------------------

def pulse_envelope(spec: DriveSpec, t: ArrayLike) -> Union[float, NDArray[np.float64]]:
    """
    Envolvente cuadrada con bordes gaussianos (FWHM = w)

    Args:
        spec: Parámetros del pulso
        t: Instante(s) en segundos, dentro de [0, t_d]

    Returns:
        alpha_in(t) en sqrt(fotones/s)
    """
    t_arr = np.asarray(t, dtype=float)
    slack = 1e-12 * spec.t_d
    if np.any(t_arr < -slack) or np.any(t_arr > spec.t_d + slack):
        raise ValidationError("t outside [0, t_d]", t_d=spec.t_d)
    t_arr = np.clip(t_arr, 0.0, spec.t_d)

    edge = 2.0 * spec.w
    rate = 4.0 * math.log(2.0) / spec.w ** 2
    rise = np.exp(-rate * (t_arr - edge) ** 2)
    fall = np.exp(-rate * (t_arr - spec.t_d + edge) ** 2)
    shape = np.where(t_arr <= edge, rise, np.where(spec.t_d - t_arr <= edge, fall, 1.0))
    value = spec.amplitude * shape
    return float(value) if value.ndim == 0 else value


def envelope_area(t_d: float, w: float) -> float:
    """Integral de la envolvente con A = 1, en forma cerrada"""
    if w <= 0 or t_d < 4 * w:
        raise ValidationError("invalid envelope parameters", t_d=t_d, w=w)
    root = math.sqrt(math.log(2.0))
    half_gaussian = math.sqrt(math.pi) * w / (4.0 * root) * math.erf(4.0 * root)
    return t_d - 4.0 * w + 2.0 * half_gaussian


def amplitude_for_theta(theta: float, gamma_a: float, t_d: float, w: float,
                        n_points: int = AREA_POINTS) -> float:
    """Amplitud A tal que 2 sqrt(Gamma_a) * integral(alpha_in) = theta (Simpson)"""
    if theta < 0:
        raise ValidationError("theta must be non-negative", theta=theta)
    if gamma_a <= 0:
        raise ValidationError("gamma_a must be positive", gamma_a=gamma_a)
    if n_points < 4097:
        raise ValidationError("area integral needs at least 4096 intervals", n_points=n_points)
    if theta == 0:
        return 0.0
    unit = DriveSpec(amplitude=1.0, w=w, t_d=t_d, gamma_a=gamma_a)
    t = np.linspace(0.0, t_d, n_points)
    area = simpson(pulse_envelope(unit, t), x=t)
    return theta / (2.0 * math.sqrt(gamma_a) * area)


# --- generadores de Lindblad -------------------------------------------------

def _dissipator(L: NDArray, rho: NDArray) -> NDArray:
    LdL = L.conj().T @ L
    return L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)


def _adjoint_dissipator(L: NDArray, effect: NDArray) -> NDArray:
    LdL = L.conj().T @ L
    return L.conj().T @ effect @ L - 0.5 * (effect @ LdL + LdL @ effect)


def _hamiltonian(omega) -> NDArray:
    omega = np.asarray(omega, dtype=float)[..., None, None]
    return -0.5 * omega * SIGMA_Y


def _lindblad_rhs(rho: NDArray, omega, rates: QubitRates) -> NDArray:
    H = _hamiltonian(omega)
    drho = -1j * (H @ rho - rho @ H)
    drho = drho + 0.5 * rates.gamma_phi * _dissipator(SIGMA_Z, rho)
    drho = drho + rates.gamma_down * _dissipator(SIGMA_MINUS, rho)
    drho = drho + rates.gamma_up * _dissipator(SIGMA_PLUS, rho)
    return drho


def _adjoint_rhs(effect: NDArray, omega, rates: QubitRates) -> NDArray:
    H = _hamiltonian(omega)
    deff = -1j * (H @ effect - effect @ H)
    deff = deff - 0.5 * rates.gamma_phi * _adjoint_dissipator(SIGMA_Z, effect)
    deff = deff - rates.gamma_down * _adjoint_dissipator(SIGMA_MINUS, effect)
    deff = deff - rates.gamma_up * _adjoint_dissipator(SIGMA_PLUS, effect)
    return deff


def lindblad_derivative(rho: ArrayLike, omega: float, rates: QubitRates) -> NDArray[np.complex128]:
    """drho/dt de la ecuación de Lindblad (desfase, relajación y excitación térmica)"""
    rho = validate_density_matrix(rho)
    return _lindblad_rhs(rho, omega, rates)


def adjoint_derivative(effect: ArrayLike, omega: float, rates: QubitRates) -> NDArray[np.complex128]:
    """dE/dt de la ecuación adjunta, con los signos menos en los disipadores"""
    effect = validate_effect_matrix(effect)
    return _adjoint_rhs(effect, omega, rates)


def _superoperator(rhs, rates: QubitRates, omega: float) -> NDArray[np.complex128]:
    columns = []
    for j in range(4):
        basis = np.zeros(4, dtype=complex)
        basis[j] = 1.0
        columns.append(rhs(basis.reshape(2, 2), omega, rates).ravel())
    return np.stack(columns, axis=1)


def liouvillian(rates: QubitRates) -> tuple:
    """(deriva, drive por unidad de Omega) como superoperadores 4x4 sobre vec fila"""
    zero = QubitRates.ideal()
    return _superoperator(_lindblad_rhs, rates, 0.0), _superoperator(_lindblad_rhs, zero, 1.0)


def adjoint_liouvillian(rates: QubitRates) -> tuple:
    zero = QubitRates.ideal()
    return _superoperator(_adjoint_rhs, rates, 0.0), _superoperator(_adjoint_rhs, zero, 1.0)


# --- integradores RK4 --------------------------------------------------------

def _rabi_samples(specs: Sequence[DriveSpec], grid: TimeGrid) -> NDArray[np.float64]:
    half = grid.half_times
    return np.stack([spec.rabi(half) for spec in specs])


def _hermitize(v: NDArray) -> NDArray:
    m = v.reshape(-1, 2, 2)
    m = 0.5 * (m + np.swapaxes(m.conj(), -1, -2))
    return m.reshape(-1, 4)


def _positivity_failures(matrices: NDArray, grid: TimeGrid, direction: str) -> List[Optional[PropagationError]]:
    min_eig = _min_eigenvalue(matrices)
    failures: List[Optional[PropagationError]] = []
    for row in min_eig:
        bad = np.flatnonzero(row < -POSITIVITY_SLACK)
        if bad.size:
            step = int(bad[0])
            failures.append(PropagationError(
                f"{direction} propagation lost positivity at step {step} "
                f"(min eigenvalue {row[step]:.3e}); reduce dt={grid.dt:.3e} s",
                step=step, dt=grid.dt, min_eigenvalue=float(row[step]),
            ))
        else:
            failures.append(None)
    return failures


def propagate_forward_batch(rho0: ArrayLike, specs: Sequence[DriveSpec], rates: QubitRates,
                            grid: TimeGrid) -> BatchPropagation:
    """
    Integrar la ecuación de Lindblad para varios pulsos con RK4 de paso fijo

    Args:
        rho0: Estado inicial común, o uno por pulso con forma (B, 2, 2)
        specs: Pulsos a integrar
        rates: Tasas de decoherencia comunes
        grid: Rejilla temporal

    Returns:
        BatchPropagation con una trayectoria por pulso y los fallos de positividad
    """
    rho0 = validate_density_matrix(rho0)
    batch = len(specs)
    omegas = _rabi_samples(specs, grid)
    drift, drive = liouvillian(rates)
    drift_t, drive_t = drift.T.copy(), drive.T.copy()

    def rhs(v, omega):
        return v @ drift_t + omega[:, None] * (v @ drive_t)

    dt = grid.dt
    v = np.broadcast_to(rho0, (batch, 2, 2)).reshape(batch, 4).astype(complex)
    out = np.empty((batch, grid.n_steps + 1, 4), dtype=complex)
    out[:, 0] = v
    for k in range(grid.n_steps):
        o0, oh, o1 = omegas[:, 2 * k], omegas[:, 2 * k + 1], omegas[:, 2 * k + 2]
        k1 = rhs(v, o0)
        k2 = rhs(v + 0.5 * dt * k1, oh)
        k3 = rhs(v + 0.5 * dt * k2, oh)
        k4 = rhs(v + dt * k3, o1)
        v = _hermitize(v + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        v = v / (v[:, 0] + v[:, 3]).real[:, None]
        out[:, k + 1] = v

    matrices = out.reshape(batch, grid.n_steps + 1, 2, 2)
    failures = _positivity_failures(matrices, grid, "forward")
    get_log_manager().log_propagation("forward", grid.n_steps, dt, batch,
                                      sum(f is not None for f in failures))
    return BatchPropagation(grid.times, matrices, np.zeros((batch, grid.n_steps + 1)), failures)


def propagate_backward_batch(e_terminal: ArrayLike, specs: Sequence[DriveSpec], rates: QubitRates,
                             grid: TimeGrid, rescale: bool = False) -> BatchPropagation:
    """
    Integrar la ecuación adjunta desde t_d hasta 0 (paso negativo)

    Args:
        e_terminal: Matriz efecto en t_d, común o una por pulso (B, 2, 2)
        specs: Pulsos a integrar
        rates: Tasas de decoherencia comunes
        grid: Rejilla temporal (la misma que hacia delante)
        rescale: Mantener max|E| en [0.5, 2] con un factor positivo registrado

    Returns:
        BatchPropagation con E(t) almacenada sobre la rejilla
    """
    e_terminal = validate_effect_matrix(e_terminal)
    batch = len(specs)
    omegas = _rabi_samples(specs, grid)
    drift, drive = adjoint_liouvillian(rates)
    drift_t, drive_t = drift.T.copy(), drive.T.copy()

    def rhs(v, omega):
        return v @ drift_t + omega[:, None] * (v @ drive_t)

    h = -grid.dt
    n = grid.n_steps
    v = np.broadcast_to(e_terminal, (batch, 2, 2)).reshape(batch, 4).astype(complex)
    out = np.empty((batch, n + 1, 4), dtype=complex)
    log_scale = np.zeros((batch, n + 1))
    running = np.zeros(batch)
    out[:, n] = v
    for k in range(n - 1, -1, -1):
        o1, oh, o0 = omegas[:, 2 * k + 2], omegas[:, 2 * k + 1], omegas[:, 2 * k]
        k1 = rhs(v, o1)
        k2 = rhs(v + 0.5 * h * k1, oh)
        k3 = rhs(v + 0.5 * h * k2, oh)
        k4 = rhs(v + h * k3, o0)
        v = _hermitize(v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if rescale:
            peak = np.max(np.abs(v), axis=1)
            off = (peak < 0.5) | (peak > 2.0)
            if np.any(off):
                factor = np.where(off, peak, 1.0)
                v = v / factor[:, None]
                running = running + np.log(factor)
        out[:, k] = v
        log_scale[:, k] = running

    matrices = out.reshape(batch, n + 1, 2, 2)
    failures = _positivity_failures(matrices, grid, "backward")
    get_log_manager().log_propagation("backward", n, grid.dt, batch,
                                      sum(f is not None for f in failures))
    return BatchPropagation(grid.times, matrices, log_scale, failures)


def propagate_forward(rho0: ArrayLike, spec: DriveSpec, rates: QubitRates,
                      grid: TimeGrid) -> Trajectory:
    result = propagate_forward_batch(rho0, [spec], rates, grid)
    if result.failures[0] is not None:
        raise result.failures[0]
    return result.trajectory(0)


def propagate_backward(e_terminal: ArrayLike, spec: DriveSpec, rates: QubitRates,
                       grid: TimeGrid, rescale: bool = False) -> Trajectory:
    result = propagate_backward_batch(e_terminal, [spec], rates, grid, rescale=rescale)
    if result.failures[0] is not None:
        raise result.failures[0]
    return result.trajectory(0)


# --- observables -------------------------------------------------------------

def expectation(operator: ArrayLike, rho: ArrayLike) -> Union[complex, NDArray[np.complex128]]:
    value = np.trace(np.asarray(operator) @ np.asarray(rho), axis1=-2, axis2=-1)
    return complex(value) if np.ndim(value) == 0 else value


def weak_value(operator: ArrayLike, rho: ArrayLike,
               effect: Optional[ArrayLike] = None) -> Union[complex, NDArray[np.complex128]]:
    """
    Valor débil Tr[E O rho] / Tr[E rho]

    Acepta pilas de matrices (..., 2, 2). Con E = I (o None) se reduce a Tr[O rho]
    por el mismo camino de código que expectation().
    """
    if effect is None or (np.shape(effect) == (2, 2) and np.array_equal(effect, IDENTITY)):
        return expectation(operator, rho)

    operator = np.asarray(operator, dtype=complex)
    rho = np.asarray(rho, dtype=complex)
    effect = np.asarray(effect, dtype=complex)
    denominator = np.trace(effect @ rho, axis1=-2, axis2=-1)
    small = np.abs(denominator) <= WEAK_VALUE_FLOOR
    if np.any(small):
        first = int(np.flatnonzero(np.atleast_1d(small))[0])
        raise PostselectionError(
            "incompatible post-selection: Tr[E rho] vanishes",
            index=first, denominator=float(np.abs(np.atleast_1d(denominator)[first])),
        )
    numerator = np.trace(effect @ operator @ rho, axis1=-2, axis2=-1)
    value = numerator / denominator
    return complex(value) if np.ndim(value) == 0 else value


def bloch_vector(rho: ArrayLike) -> NDArray[np.float64]:
    """(<sx>, <sy>, <sz>) sobre el último par de ejes"""
    rho = np.asarray(rho, dtype=complex)
    return np.stack([expectation(S, rho).real for S in (SIGMA_X, SIGMA_Y, SIGMA_Z)], axis=-1)


def thermal_state(p_e_th: float) -> DensityMatrix:
    if not 0.0 <= p_e_th <= 1.0:
        raise ValidationError("probability outside [0, 1]", p_e_th=p_e_th)
    return np.diag([1.0 - p_e_th, p_e_th]).astype(complex)


def terminal_effect(outcome: Union[str, Postselect], F_g: float = 1.0, F_e: float = 1.0) -> EffectMatrix:
    """E(t_d) para el resultado de lectura, degradado por la fidelidad"""
    outcome = Postselect(outcome)
    for name, value in (("F_g", F_g), ("F_e", F_e)):
        if not 0.5 <= value <= 1.0:
            raise ValidationError(f"{name} outside [0.5, 1]", **{name: value})
    if outcome is Postselect.NONE:
        return IDENTITY.copy()
    if outcome is Postselect.G:
        return F_g * PROJECTOR_G + (1.0 - F_g) * PROJECTOR_E
    return F_e * PROJECTOR_E + (1.0 - F_e) * PROJECTOR_G


def dynamics_frame(rho: Trajectory, effect: Trajectory, delay_ns: float = 0.0) -> dict:
    """Columnas de la serie temporal t_ns, sx, sy, sz, E_gg, E_ee, Re/Im del valor débil de sigma_-"""
    bloch = bloch_vector(rho.matrices)
    e_true = effect.unscaled()
    wv = weak_value(SIGMA_MINUS, rho.matrices, effect.matrices)
    return {
        "t_ns": rho.times * 1e9 + delay_ns,
        "sx": bloch[:, 0],
        "sy": bloch[:, 1],
        "sz": bloch[:, 2],
        "E_gg": e_true[:, 0, 0].real,
        "E_ee": e_true[:, 1, 1].real,
        "Re_wv_sminus": np.real(wv),
        "Im_wv_sminus": np.imag(wv),
    }

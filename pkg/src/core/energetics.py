"""
Gate Energetics - Energética
Flujo de fotones saliente (sin post-selección y post-seleccionado), números
de fotones integrados y barridos de Delta n en el ángulo de rotación.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import simpson
from tqdm import tqdm

from core.dynamics import (
    DEFAULT_STEPS,
    IDENTITY,
    PROJECTOR_E,
    PROJECTOR_G,
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    SIGMA_Z,
    DriveSpec,
    ExperimentConstants,
    Postselect,
    QubitRates,
    TimeGrid,
    Trajectory,
    expectation,
    propagate_backward_batch,
    propagate_forward_batch,
    terminal_effect,
    thermal_state,
    weak_value,
)
from core.error_processor import (
    GateEnergeticsError,
    ValidationError,
    get_error_processor,
)
from core.log_manager import get_log_manager
from core.settings import get_settings

logger = logging.getLogger("gate_energetics.energetics")

SWEEP_CHUNK = 16
OUTCOMES = (Postselect.G, Postselect.E)


@dataclass(frozen=True)
class PulseSetup:
    """Pulso, lectura y estado inicial comunes a todos los puntos de un barrido"""

    gamma_a: float
    t_d: float
    w: float
    F_g: float = 1.0
    F_e: float = 1.0
    p_e_initial: float = 0.0
    n_steps: int = DEFAULT_STEPS

    @classmethod
    def from_constants(cls, constants: ExperimentConstants,
                       n_steps: int = DEFAULT_STEPS) -> "PulseSetup":
        return cls(
            gamma_a=constants.gamma_a,
            t_d=constants.t_d,
            w=constants.w,
            F_g=constants.F_g,
            F_e=constants.F_e,
            p_e_initial=constants.p_e_th,
            n_steps=n_steps,
        )

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.t_d, self.n_steps)

    def spec(self, theta: float) -> DriveSpec:
        return DriveSpec.for_theta(theta, self.gamma_a, self.t_d, self.w)

    def effect(self, outcome: Union[str, Postselect]):
        return terminal_effect(outcome, self.F_g, self.F_e)


@dataclass
class FluxTrace:
    grid: TimeGrid
    flux: NDArray[np.float64]
    postselect: Postselect
    probability: float = 1.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.flux)):
            raise ValidationError("flux trace contains non-finite values",
                                  postselect=self.postselect.value)


@dataclass
class EnergyBudget:
    theta: float
    postselect: Postselect
    n_in: float
    n_out: float
    p_outcome: float = 1.0
    p_outcome_with_fidelity: float = 1.0
    error: Optional[Dict] = None

    def __post_init__(self):
        if self.n_in < 0:
            raise ValidationError("n_in must be non-negative", n_in=self.n_in)

    @property
    def delta_n(self) -> float:
        return self.n_out - self.n_in

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class PowerTraces:
    """Las tres trazas de potencia de un pulso y lo necesario para reconstruirlas"""

    theta: float
    n_in: float
    rho: Trajectory
    effects: Dict[Postselect, Trajectory]
    traces: Dict[Postselect, FluxTrace]
    probabilities: Dict[Postselect, float] = field(default_factory=dict)

    @property
    def times(self) -> NDArray[np.float64]:
        return self.rho.times


# --- flujos ------------------------------------------------------------------

def _coupling(rates: QubitRates, drive_gamma_a: Optional[float]) -> float:
    return rates.gamma_a if drive_gamma_a is None else drive_gamma_a


def flux_unconditioned(alpha_in: ArrayLike, rho: ArrayLike, rates: QubitRates,
                       drive_gamma_a: Optional[float] = None):
    """
    Flujo saliente medio alpha^2 - (Omega_a/2)<sx> + Gamma_a (1 + <sz>)/2

    Args:
        alpha_in: Amplitud entrante, escalar o array alineado con rho
        rho: Matriz densidad o pila (..., 2, 2)
        rates: Tasas del qubit; gamma_a es la emisión radiativa
        drive_gamma_a: Acoplamiento del drive; por defecto rates.gamma_a

    Returns:
        Flujo en fotones/s
    """
    alpha = np.asarray(alpha_in, dtype=float)
    if np.any(alpha < 0):
        raise ValidationError("alpha_in must be non-negative")
    omega = 2.0 * math.sqrt(_coupling(rates, drive_gamma_a)) * alpha
    sx = np.real(expectation(SIGMA_X, rho))
    sz = np.real(expectation(SIGMA_Z, rho))
    return alpha ** 2 - 0.5 * omega * sx + rates.gamma_a * 0.5 * (1.0 + sz)


def amplitude_postselected(alpha_in: ArrayLike, rho: ArrayLike, effect: ArrayLike,
                           rates: QubitRates, drive_gamma_a: Optional[float] = None):
    """Amplitud post-seleccionada alpha_in - sqrt(Gamma_a) <sigma_->_w (compleja)"""
    alpha = np.asarray(alpha_in, dtype=float)
    if np.any(alpha < 0):
        raise ValidationError("alpha_in must be non-negative")
    wv = weak_value(SIGMA_MINUS, rho, effect)
    return alpha - math.sqrt(_coupling(rates, drive_gamma_a)) * wv


def flux_postselected(alpha_in: ArrayLike, rho: ArrayLike, effect: ArrayLike,
                      rates: QubitRates, drive_gamma_a: Optional[float] = None):
    """
    Flujo post-seleccionado con valores débiles

    El último término es el valor débil de la tasa de fotodetección
    Tr[E sigma_- rho sigma_+] / Tr[E rho].
    """
    alpha = np.asarray(alpha_in, dtype=float)
    if np.any(alpha < 0):
        raise ValidationError("alpha_in must be non-negative")
    rho = np.asarray(rho, dtype=complex)
    effect = np.asarray(effect, dtype=complex)
    omega = 2.0 * math.sqrt(_coupling(rates, drive_gamma_a)) * alpha
    wv = weak_value(SIGMA_MINUS, rho, effect)
    denominator = np.trace(effect @ rho, axis1=-2, axis2=-1)
    emission = np.trace(effect @ SIGMA_MINUS @ rho @ SIGMA_PLUS, axis1=-2, axis2=-1) / denominator
    return alpha ** 2 - omega * np.real(wv) + rates.gamma_a * np.real(emission)


def integrate_photon_number(trace: FluxTrace) -> float:
    """Integral de Simpson compuesta sobre la rejilla del trazo"""
    return float(simpson(trace.flux, x=trace.grid.times))


def incoming_photon_number(spec: DriveSpec, grid: TimeGrid) -> float:
    """n_in = integral de alpha_in^2 sobre la misma rejilla que n_out"""
    alpha = spec.alpha_in(grid.times)
    return float(simpson(alpha ** 2, x=grid.times))


def purity_bound(lambda_g: complex, lambda_e: complex, overlap: complex) -> float:
    """Pureza 1 - 2|lambda_g lambda_e|^2 (1 - |<psi_e|psi_g>|^2) del qubit entrelazado"""
    norm = abs(lambda_g) ** 2 + abs(lambda_e) ** 2
    if abs(norm - 1.0) > 1e-9:
        raise ValidationError("|lambda_g|^2 + |lambda_e|^2 must equal 1", norm=norm)
    if abs(overlap) > 1.0 + 1e-12:
        raise ValidationError("|overlap| exceeds 1", overlap=abs(overlap))
    return 1.0 - 2.0 * abs(lambda_g * lambda_e) ** 2 * (1.0 - min(abs(overlap), 1.0) ** 2)


# --- trazas ------------------------------------------------------------------

def flux_trace(spec: DriveSpec, rates: QubitRates, grid: TimeGrid,
               postselect: Union[str, Postselect] = Postselect.NONE,
               F_g: float = 1.0, F_e: float = 1.0, p_e_initial: float = 0.0) -> FluxTrace:
    """Traza de flujo de un único pulso para un resultado de lectura"""
    postselect = Postselect(postselect)
    forward = propagate_forward_batch(thermal_state(p_e_initial), [spec], rates, grid)
    if forward.failures[0] is not None:
        raise forward.failures[0]
    rho = forward.matrices[0]
    alpha = spec.alpha_in(grid.times)
    if postselect is Postselect.NONE:
        flux = flux_unconditioned(alpha, rho, rates, spec.gamma_a)
        return FluxTrace(grid, flux, postselect, 1.0)

    backward = propagate_backward_batch(terminal_effect(postselect, F_g, F_e), [spec], rates, grid)
    if backward.failures[0] is not None:
        raise backward.failures[0]
    effect = backward.matrices[0]
    flux = flux_postselected(alpha, rho, effect, rates, spec.gamma_a)
    probability = float(np.real(np.trace(effect[-1] @ rho[-1])))
    return FluxTrace(grid, flux, postselect, probability)


def power_traces(theta: float, rates: QubitRates, setup: PulseSetup) -> PowerTraces:
    """
    Trazas de potencia sin post-selección y post-seleccionadas en g y e

    Args:
        theta: Ángulo de rotación objetivo (rad)
        rates: Tasas del qubit
        setup: Pulso, fidelidades y estado inicial

    Returns:
        PowerTraces con rho(t), E_x(t) y las tres trazas sobre la misma rejilla
    """
    grid = setup.grid
    spec = setup.spec(theta)
    forward = propagate_forward_batch(thermal_state(setup.p_e_initial), [spec], rates, grid)
    if forward.failures[0] is not None:
        raise forward.failures[0]
    rho = forward.trajectory(0)
    alpha = spec.alpha_in(grid.times)

    effects = {Postselect.NONE: Trajectory(grid.times, np.broadcast_to(IDENTITY, rho.matrices.shape).copy())}
    traces = {Postselect.NONE: FluxTrace(grid, flux_unconditioned(alpha, rho.matrices, rates, spec.gamma_a),
                                         Postselect.NONE, 1.0)}
    probabilities = {Postselect.NONE: 1.0}
    for outcome in OUTCOMES:
        backward = propagate_backward_batch(setup.effect(outcome), [spec], rates, grid)
        if backward.failures[0] is not None:
            raise backward.failures[0]
        effect = backward.trajectory(0)
        effects[outcome] = effect
        flux = flux_postselected(alpha, rho.matrices, effect.matrices, rates, spec.gamma_a)
        probability = float(np.real(np.trace(effect.final @ rho.final)))
        traces[outcome] = FluxTrace(grid, flux, outcome, probability)
        probabilities[outcome] = probability

    return PowerTraces(
        theta=theta,
        n_in=incoming_photon_number(spec, grid),
        rho=rho,
        effects=effects,
        traces=traces,
        probabilities=probabilities,
    )


# --- barrido en theta --------------------------------------------------------

def _failed_budget(theta: float, outcome: Postselect, n_in: float, error: BaseException) -> EnergyBudget:
    record = get_error_processor().process_error(
        error, context={"theta": theta, "postselect": outcome.value}
    )
    return EnergyBudget(theta=theta, postselect=outcome, n_in=n_in, n_out=float("nan"),
                        p_outcome=float("nan"), p_outcome_with_fidelity=float("nan"), error=record)


def _sweep_chunk(thetas: Sequence[float], rates: QubitRates,
                 setup: PulseSetup) -> List[Dict[Postselect, EnergyBudget]]:
    grid = setup.grid
    times = grid.times
    specs = [setup.spec(theta) for theta in thetas]
    forward = propagate_forward_batch(thermal_state(setup.p_e_initial), specs, rates, grid)
    backward = {
        outcome: propagate_backward_batch(setup.effect(outcome), specs, rates, grid)
        for outcome in OUTCOMES
    }

    rows = []
    for index, (theta, spec) in enumerate(zip(thetas, specs)):
        alpha = spec.alpha_in(times)
        n_in = float(simpson(alpha ** 2, x=times))
        rho = forward.matrices[index]
        row: Dict[Postselect, EnergyBudget] = {}

        if forward.failures[index] is not None:
            for outcome in (Postselect.NONE,) + OUTCOMES:
                row[outcome] = _failed_budget(theta, outcome, n_in, forward.failures[index])
            rows.append(row)
            continue

        flux = flux_unconditioned(alpha, rho, rates, spec.gamma_a)
        row[Postselect.NONE] = EnergyBudget(theta, Postselect.NONE, n_in,
                                            float(simpson(flux, x=times)))
        projectors = {Postselect.G: PROJECTOR_G, Postselect.E: PROJECTOR_E}
        for outcome in OUTCOMES:
            result = backward[outcome]
            try:
                if result.failures[index] is not None:
                    raise result.failures[index]
                effect = result.matrices[index]
                flux = flux_postselected(alpha, rho, effect, rates, spec.gamma_a)
                row[outcome] = EnergyBudget(
                    theta=theta,
                    postselect=outcome,
                    n_in=n_in,
                    n_out=float(simpson(flux, x=times)),
                    p_outcome=float(np.real(np.trace(projectors[outcome] @ rho[-1]))),
                    p_outcome_with_fidelity=float(np.real(np.trace(effect[-1] @ rho[-1]))),
                )
            except GateEnergeticsError as exc:
                logger.warning(f"Punto theta={theta:.4f} sin resultado para {outcome.value}: {exc}")
                row[outcome] = _failed_budget(theta, outcome, n_in, exc)
        rows.append(row)

        get_log_manager().log_sweep_point(theta, {
            outcome.value: row[outcome].delta_n for outcome in row
        })
    return rows


def delta_n_sweep(theta_list: Iterable[float], rates: QubitRates, setup: PulseSetup,
                  workers: Optional[int] = None, chunk_size: int = SWEEP_CHUNK,
                  progress: bool = False) -> Dict[Postselect, List[EnergyBudget]]:
    """
    Barrer Delta n = n_out - n_in en theta para los tres resultados de lectura

    Los puntos se integran por bloques (una propagación vectorizada por bloque)
    y los bloques se reparten entre hilos. Un fallo en un theta queda registrado
    en su EnergyBudget sin abortar el barrido.

    Args:
        theta_list: Ángulos de rotación (rad), no negativos
        rates: Tasas del qubit
        setup: Pulso, fidelidades y estado inicial
        workers: Hilos; por defecto SWEEP_WORKERS de los ajustes
        chunk_size: Puntos por propagación vectorizada
        progress: Mostrar barra de progreso

    Returns:
        Diccionario resultado -> lista de EnergyBudget en el orden de theta_list
    """
    thetas = [float(theta) for theta in theta_list]
    if not thetas:
        raise ValidationError("theta_list must not be empty")
    if min(thetas) < 0:
        raise ValidationError("theta values must be non-negative")

    workers = workers or get_settings().sweep_workers
    chunks = [thetas[i:i + chunk_size] for i in range(0, len(thetas), chunk_size)]
    logger.info(f"Barrido de {len(thetas)} puntos en {len(chunks)} bloques con {workers} hilo(s)")

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(_sweep_chunk, chunk, rates, setup) for chunk in chunks]
        results = []
        for future in tqdm(futures, desc="delta-n sweep", unit="chunk", disable=not progress):
            results.extend(future.result())

    return {outcome: [row[outcome] for row in results]
            for outcome in (Postselect.NONE, Postselect.G, Postselect.E)}


def sweep_thetas(theta_max: float, steps: int) -> NDArray[np.float64]:
    """Rejilla de theta en [0, theta_max]; steps = 1 da solo theta_max"""
    if steps < 1:
        raise ValidationError("steps must be >= 1", steps=steps)
    if steps == 1:
        return np.array([theta_max])
    return np.linspace(0.0, theta_max, steps)


def linear_backaction_slope(budgets: Sequence[EnergyBudget], theta_min: float,
                            theta_max: float) -> Tuple[float, NDArray, NDArray]:
    """
    Pendiente por el origen de los máximos locales de |Delta n| frente a theta

    Los puntos fallidos (NaN) cuentan como mínimos al buscar máximos locales.

    Returns:
        (pendiente, thetas de los máximos, valores |Delta n| de los máximos)
    """
    ordered = sorted(budgets, key=lambda b: b.theta)
    thetas = np.array([b.theta for b in ordered])
    values = np.abs(np.array([b.delta_n for b in ordered]))
    values = np.where(np.isfinite(values), values, -np.inf)
    padded = np.concatenate(([-np.inf], values, [-np.inf]))
    is_peak = (values > padded[:-2]) & (values >= padded[2:]) & np.isfinite(values)
    in_range = (thetas >= theta_min) & (thetas <= theta_max)
    peak_thetas = thetas[is_peak & in_range]
    peak_values = values[is_peak & in_range]
    if peak_thetas.size == 0:
        raise ValidationError("no local maxima in the requested theta range",
                              theta_min=theta_min, theta_max=theta_max)
    slope = float(np.dot(peak_thetas, peak_values) / np.dot(peak_thetas, peak_thetas))
    return slope, peak_thetas, peak_values


def sweep_rows(sweep: Dict[Postselect, List[EnergyBudget]]) -> Dict[str, List[float]]:
    """Columnas theta_over_pi, n_in, dn_none, dn_g, dn_e, p_g, p_e"""
    none, g, e = sweep[Postselect.NONE], sweep[Postselect.G], sweep[Postselect.E]
    return {
        "theta_over_pi": [b.theta / math.pi for b in none],
        "n_in": [b.n_in for b in none],
        "dn_none": [b.delta_n for b in none],
        "dn_g": [b.delta_n for b in g],
        "dn_e": [b.delta_n for b in e],
        "p_g": [b.p_outcome_with_fidelity for b in g],
        "p_e": [b.p_outcome_with_fidelity for b in e],
    }


def sweep_errors(sweep: Dict[Postselect, List[EnergyBudget]]) -> List[Dict]:
    return [b.error for budgets in sweep.values() for b in budgets if b.error is not None]


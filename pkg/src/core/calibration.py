"""
Gate Energetics - Calibración
Cadena de análisis experimental: clasificación de lecturas IQ con una mezcla
gaussiana y rechazo, fidelidades por la regla de Bayes, modelos de T1 y
calibración potencia bruta -> flujo de fotones.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import lsq_linear
from scipy.special import logsumexp, ndtr
from sklearn.cluster import kmeans_plusplus

from core.error_processor import ConvergenceError, ValidationError
from core.log_manager import get_log_manager

logger = logging.getLogger("gate_energetics.calibration")

LABELS = ("g", "e", "f")
REJECTED = "rejected"
DEFAULT_RADIUS_FACTOR = 1.5
MAX_RESTARTS = 5
TRANSIT = "transit"
TRANSIT_WINDOW = (0.25, 0.75)
TRANSIT_REFRESHES = 3
TRANSIT_START_WEIGHT = 0.05
FIDELITY_LABELS = ("g", "e")
FIDELITY_SLACK = 1e-9

# P("x") implícitos en los valores publicados de P("x"|x), p_x^th y F_x
IMPLIED_P_OUTCOME_G = 0.696 * 0.892 / 0.985
IMPLIED_P_OUTCOME_E = 0.605 * 0.088 / 0.867


@dataclass(frozen=True)
class IQSample:
    i: float
    q: float

    def __post_init__(self):
        if not (math.isfinite(self.i) and math.isfinite(self.q)):
            raise ValidationError("IQ sample must be finite", i=self.i, q=self.q)

    @property
    def z(self) -> complex:
        return complex(self.i, self.q)


@dataclass(frozen=True)
class GaussianComponent:
    center: complex
    sigma_iq: float
    weight: float
    label: str

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ValidationError("component weight outside [0, 1]", weight=self.weight)
        if self.sigma_iq <= 0:
            raise ValidationError("sigma_iq must be positive", sigma_iq=self.sigma_iq)


@dataclass(frozen=True)
class TransitBand:
    """
    Lecturas de qubits que decaen durante la integración

    El centro de la lectura cae uniformemente en la fracción window del
    segmento start -> end y se le suma el mismo ruido gaussiano isótropo que
    a las componentes.
    """

    start: complex
    end: complex
    sigma_iq: float
    window: Tuple[float, float] = TRANSIT_WINDOW

    def __post_init__(self):
        if self.sigma_iq <= 0:
            raise ValidationError("sigma_iq must be positive", sigma_iq=self.sigma_iq)
        if abs(self.end - self.start) <= 0:
            raise ValidationError("transit band needs distinct end points")
        low, high = self.window
        if not 0.0 <= low < high <= 1.0:
            raise ValidationError("transit window must lie in [0, 1]", window=self.window)

    def log_density(self, z: NDArray[np.complex128]) -> NDArray[np.float64]:
        axis = self.end - self.start
        length = abs(axis)
        rel = (z - self.start) * np.conj(axis) / length
        u, v = rel.real, rel.imag
        s = self.sigma_iq
        low, high = self.window[0] * length, self.window[1] * length
        # la resta de colas evita la cancelación lejos del segmento
        beyond = u > 0.5 * (low + high)
        mass = np.where(beyond,
                        ndtr((high - u) / s) - ndtr((low - u) / s),
                        ndtr((u - low) / s) - ndtr((u - high) / s))
        return (np.log(np.maximum(mass, 1e-300)) - math.log(high - low)
                - 0.5 * (v / s) ** 2 - 0.5 * math.log(2.0 * math.pi) - math.log(s))


@dataclass
class MixtureModel:
    """
    Mezcla de gaussianas 2D isótropas con una sigma común

    Los pesos de las componentes son poblaciones de estado y suman 1; una
    banda de tránsito opcional se lleva la fracción transit_weight de las
    lecturas.
    """

    components: List[GaussianComponent]
    log_likelihood_history: List[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = True
    restarts: int = 0
    transit: Optional[TransitBand] = None
    transit_weight: float = 0.0

    def __post_init__(self):
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValidationError("mixture weights must sum to 1", total=total)
        if not 0.0 <= self.transit_weight < 1.0:
            raise ValidationError("transit weight outside [0, 1)", transit_weight=self.transit_weight)
        if self.transit_weight > 0 and self.transit is None:
            raise ValidationError("transit weight without a transit band")

    @property
    def sector_labels(self) -> List[str]:
        return self.labels + ([TRANSIT] if self.transit is not None else [])

    @property
    def sigma_iq(self) -> float:
        return self.components[0].sigma_iq

    @property
    def labels(self) -> List[str]:
        return [c.label for c in self.components]

    @property
    def centers(self) -> NDArray[np.complex128]:
        return np.array([c.center for c in self.components])

    @property
    def weights(self) -> NDArray[np.float64]:
        return np.array([c.weight for c in self.components])

    def component(self, label: str) -> GaussianComponent:
        for c in self.components:
            if c.label == label:
                return c
        raise ValidationError("unknown component label", label=label)

    def log_joint(self, z: NDArray[np.complex128]) -> NDArray[np.float64]:
        """log((1 - t) w_j N(z | mu_j, sigma^2 I)) y, con banda, log(t p_transit(z)); forma (N, k[+1])"""
        columns = _log_joint(z, self.centers, self.sigma_iq ** 2, (1.0 - self.transit_weight) * self.weights)
        if self.transit is None:
            return columns
        band = math.log(max(self.transit_weight, 1e-300)) + self.transit.log_density(z)
        return np.column_stack([columns, band])

    def posterior(self, samples) -> NDArray[np.float64]:
        log_joint = self.log_joint(as_complex(samples))
        return np.exp(log_joint - logsumexp(log_joint, axis=1)[:, None])

    def log_likelihood(self, samples) -> float:
        return float(logsumexp(self.log_joint(as_complex(samples)), axis=1).sum())

    def to_dict(self) -> Dict:
        return {
            "sigma_iq": self.sigma_iq,
            "components": [
                {"label": c.label, "center_i": c.center.real, "center_q": c.center.imag, "weight": c.weight}
                for c in self.components
            ],
            "transit_weight": self.transit_weight,
            "n_iter": self.n_iter,
            "restarts": self.restarts,
        }


@dataclass
class FidelityReport:
    p_state: Dict[str, float]
    p_outcome: Dict[str, float]
    p_outcome_given_state: Dict[str, float]
    fidelities: Dict[str, float]
    rejection_fraction: float

    def to_dict(self) -> Dict:
        return {
            "p_state": self.p_state,
            "p_outcome": self.p_outcome,
            "p_outcome_given_state": self.p_outcome_given_state,
            "fidelities": self.fidelities,
            "rejection_fraction": self.rejection_fraction,
        }


@dataclass
class ConditionalFit:
    P_gg0: float
    P_ge0: float
    residual_rms: float
    n_iter: int


@dataclass(frozen=True)
class PowerRecord:
    """Potencias del experimento (W) y tasas del drive para la calibración en flujo"""

    p_raw: NDArray[np.float64]
    p_vac: float
    p_ref: float
    p_c_plus_vac: float
    omega_a: float
    gamma_a: float

    def __post_init__(self):
        object.__setattr__(self, "p_raw", np.asarray(self.p_raw, dtype=float))
        if self.p_ref <= self.p_c_plus_vac:
            raise ValidationError("p_ref must exceed p_c_plus_vac",
                                  p_ref=self.p_ref, p_c_plus_vac=self.p_c_plus_vac)
        if self.omega_a <= 0 or self.gamma_a <= 0:
            raise ValidationError("omega_a and gamma_a must be positive",
                                  omega_a=self.omega_a, gamma_a=self.gamma_a)

    @property
    def p_c(self) -> float:
        return self.p_c_plus_vac - self.p_vac

    @property
    def alpha_in_squared(self) -> float:
        """|alpha_in|^2 = Omega_a^2 / (4 Gamma_a)"""
        return self.omega_a ** 2 / (4.0 * self.gamma_a)

    @property
    def gain(self) -> float:
        return (self.p_ref - self.p_c - self.p_vac) / self.alpha_in_squared


# --- muestras IQ -------------------------------------------------------------

def as_complex(samples: Union[Sequence[IQSample], ArrayLike]) -> NDArray[np.complex128]:
    """Aceptar IQSample, números complejos o pares (N, 2)"""
    if isinstance(samples, np.ndarray) and np.iscomplexobj(samples):
        z = samples.ravel()
    elif len(samples) and isinstance(samples[0], IQSample):
        z = np.array([s.z for s in samples])
    else:
        arr = np.asarray(samples)
        if np.iscomplexobj(arr):
            z = arr.ravel()
        elif arr.ndim == 2 and arr.shape[1] == 2:
            z = arr[:, 0] + 1j * arr[:, 1]
        else:
            raise ValidationError("samples must be IQSample, complex or (N, 2) pairs", shape=arr.shape)
    if not np.all(np.isfinite(z)):
        raise ValidationError("IQ samples must be finite")
    return z.astype(complex)


def _log_joint(z, centers, variance, weights) -> NDArray[np.float64]:
    distance = np.abs(z[:, None] - centers[None, :]) ** 2
    return np.log(weights)[None, :] - np.log(2.0 * math.pi * variance) - distance / (2.0 * variance)


# --- EM ----------------------------------------------------------------------

@dataclass
class _EMRun:
    centers: NDArray[np.complex128]
    variance: float
    weights: NDArray[np.float64]
    history: List[float]
    converged: bool
    band: Optional[TransitBand] = None
    transit_weight: float = 0.0
    n_iter: int = 0


def _initial_centers(z: NDArray, k: int, seed: int, restart: int) -> NDArray[np.complex128]:
    # sklearn sólo admite semillas de 32 bits
    state = int(np.random.SeedSequence([seed, restart]).generate_state(1)[0])
    points = np.column_stack([z.real, z.imag])
    seeds, _ = kmeans_plusplus(points, n_clusters=k, random_state=state)
    return seeds[:, 0] + 1j * seeds[:, 1]


def _run_em(z: NDArray, centers: NDArray, variance: float, weights: NDArray, max_iter: int,
            tol: float, band: Optional[TransitBand] = None,
            transit_weight: float = 0.0) -> Optional[_EMRun]:
    """EM con la banda de tránsito fija; devuelve None si una componente degenera"""
    n = z.size
    band_density = band.log_density(z) if band is not None else None
    history: List[float] = []
    converged = False
    for iteration in range(1, max_iter + 1):
        log_joint = _log_joint(z, centers, variance, (1.0 - transit_weight) * weights)
        if band_density is not None:
            log_joint = np.column_stack([log_joint, math.log(max(transit_weight, 1e-300)) + band_density])
        log_norm = logsumexp(log_joint, axis=1)
        ll = float(log_norm.sum())
        if history and ll < history[-1] - 1e-9 * abs(history[-1]):
            raise ConvergenceError("EM log-likelihood decreased",
                                   iteration=iteration, previous=history[-1], current=ll)
        history.append(ll)
        if len(history) > 1 and (history[-1] - history[-2]) / n < tol:
            converged = True
            break

        gamma = np.exp(log_joint - log_norm[:, None])
        if band_density is not None:
            transit_weight = float(gamma[:, -1].mean())
            gamma = gamma[:, :-1]
        occupancy = gamma.sum(axis=0)
        if np.any(occupancy < 10.0):
            return None
        mass = float(occupancy.sum())
        weights = occupancy / mass
        centers = (gamma * z[:, None]).sum(axis=0) / occupancy
        distance = np.abs(z[:, None] - centers[None, :]) ** 2
        variance = float((gamma * distance).sum() / (2.0 * mass))
        if variance <= 1e-24 * max(np.abs(z).max() ** 2, 1e-300):
            return None

    return _EMRun(centers, variance, weights, history, converged, band, transit_weight, len(history))


def _refresh_transit(z: NDArray, run: _EMRun, max_iter: int, tol: float) -> Optional[_EMRun]:
    """Rehacer la banda g->e con los centros y la sigma del último ajuste y repetir el EM"""
    n_iter = run.n_iter
    transit_weight = TRANSIT_START_WEIGHT
    for _ in range(TRANSIT_REFRESHES):
        order = np.argsort(-run.weights, kind="stable")
        band = TransitBand(complex(run.centers[order[0]]), complex(run.centers[order[1]]),
                           math.sqrt(run.variance))
        run = _run_em(z, run.centers, run.variance, run.weights, max_iter, tol, band, transit_weight)
        if run is None:
            return None
        n_iter += run.n_iter
        transit_weight = run.transit_weight
    run.n_iter = n_iter
    return run


def em_fit(samples, k: int = 3, seed: int = 0, max_iter: int = 500,
           tol: float = 1e-9, transit: bool = True) -> MixtureModel:
    """
    Ajuste EM de una mezcla de k gaussianas 2D con sigma isótropa común

    La inicialización usa k-means++ con una semilla derivada de (seed,
    reinicio). Las componentes se etiquetan por peso decreciente (g, e, f).
    Con transit y k >= 2 se añade una banda entre g y e para las lecturas
    que decaen durante la integración; sus pesos no cuentan en las
    poblaciones. Una componente degenerada provoca un reinicio, hasta
    MAX_RESTARTS veces.

    Args:
        samples: Muestras IQ (IQSample, complejos o pares (N, 2))
        k: Número de componentes, 1 a 3
        seed: Semilla de la inicialización (entero no negativo, 64 bits)
        max_iter: Iteraciones máximas por ajuste
        tol: Ganancia mínima de log-verosimilitud por muestra
        transit: Modelar las lecturas en tránsito g->e

    Returns:
        MixtureModel ajustado
    """
    z = as_complex(samples)
    if k not in (1, 2, 3):
        raise ValidationError("k must be 1, 2 or 3", k=k)
    if z.size < 100 * k:
        raise ValidationError("not enough samples for the mixture", samples=z.size, k=k)
    if seed < 0:
        raise ValidationError("seed must be non-negative", seed=seed)

    for restart in range(MAX_RESTARTS + 1):
        centers = _initial_centers(z, k, seed, restart)
        nearest = np.min(np.abs(z[:, None] - centers[None, :]) ** 2, axis=1)
        variance = max(nearest.mean() / 2.0, 1e-300)
        run = _run_em(z, centers, variance, np.full(k, 1.0 / k), max_iter, tol)
        if run is not None and transit and k >= 2:
            run = _refresh_transit(z, run, max_iter, tol)
        if run is not None:
            break
        logger.warning(f"Componente degenerada en EM; reinicio {restart + 1} de {MAX_RESTARTS}")
    else:
        raise ConvergenceError("EM produced degenerate components after restarts",
                               restarts=MAX_RESTARTS, seed=seed)

    if not run.converged:
        logger.warning(f"EM alcanzó max_iter={max_iter} sin cumplir la tolerancia")
    sigma = math.sqrt(run.variance)
    order = np.argsort(-run.weights, kind="stable")
    components = [
        GaussianComponent(complex(run.centers[j]), sigma, float(run.weights[j]), LABELS[rank])
        for rank, j in enumerate(order)
    ]
    model = MixtureModel(components, run.history, run.n_iter, run.converged, restart,
                         run.band, run.transit_weight)
    _check_axis_order(model)
    get_log_manager().log_fit_result("gmm", model.to_dict(), -run.history[-1] / z.size)
    return model


def _check_axis_order(model: MixtureModel) -> None:
    if len(model.components) < 3:
        return
    g, e, f = (model.component(label).center for label in LABELS)
    axis = e - g
    projection = lambda c: ((c - g) * np.conj(axis)).real / abs(axis)
    if not projection(f) > projection(e):
        logger.warning("La componente f no queda más allá de e sobre el eje g->e; revisar etiquetas")


def relabel(model: MixtureModel, reference: Dict[str, complex]) -> MixtureModel:
    """Reasignar etiquetas por proximidad a centros de referencia conocidos"""
    labels = list(reference)
    if len(labels) != len(model.components):
        raise ValidationError("reference must name every component", labels=labels)
    best = min(
        itertools.permutations(labels),
        key=lambda perm: sum(abs(c.center - reference[lab]) for c, lab in zip(model.components, perm)),
    )
    components = [
        GaussianComponent(c.center, c.sigma_iq, c.weight, lab)
        for c, lab in zip(model.components, best)
    ]
    return MixtureModel(components, model.log_likelihood_history, model.n_iter,
                        model.converged, model.restarts, model.transit, model.transit_weight)


# --- clasificación -----------------------------------------------------------

def circles_overlap(model: MixtureModel, radius_factor: float = DEFAULT_RADIUS_FACTOR) -> bool:
    centers = model.centers
    limit = 2.0 * radius_factor * model.sigma_iq
    return any(abs(a - b) < limit for a, b in itertools.combinations(centers, 2))


def classify_with_rejection(model: MixtureModel, sample,
                            radius_factor: float = DEFAULT_RADIUS_FACTOR):
    """
    Etiqueta g/e/f si la muestra cae dentro de radius_factor*sigma de un centro

    Acepta una muestra (devuelve str) o un conjunto (devuelve array de str).
    Fuera de todos los círculos la muestra queda "rejected"; si varios
    círculos la contienen gana el centro más cercano.
    """
    single = isinstance(sample, (IQSample, complex, float, int))
    if isinstance(sample, IQSample):
        z = np.array([sample.z])
    elif single:
        z = np.array([complex(sample)])
    else:
        z = as_complex(sample)

    if circles_overlap(model, radius_factor):
        logger.warning(f"Los círculos de clasificación se solapan a {radius_factor} sigma")

    distance = np.abs(z[:, None] - model.centers[None, :]) / model.sigma_iq
    inside = distance < radius_factor
    nearest = np.argmin(distance, axis=1)
    labels = np.array(model.labels, dtype=object)[nearest]
    labels[~inside.any(axis=1)] = REJECTED
    return str(labels[0]) if single else labels


def sector_probabilities(model: MixtureModel, samples) -> Dict[str, float]:
    """Fracción de muestras cuya componente más probable es cada etiqueta (y la banda de tránsito)"""
    z = as_complex(samples)
    labels = model.sector_labels
    winners = np.argmax(model.log_joint(z), axis=1)
    counts = np.bincount(winners, minlength=len(labels))
    return {label: float(count / z.size) for label, count in zip(labels, counts)}


def readout_fidelity(p_outcome_given_state: float, p_state: float, p_outcome: float) -> float:
    """Regla de Bayes F = P("x"|x) P(x) / P("x"); falla si el resultado supera 1"""
    for name, value in (("p_outcome_given_state", p_outcome_given_state),
                        ("p_state", p_state), ("p_outcome", p_outcome)):
        if not 0.0 < value <= 1.0:
            raise ValidationError(f"{name} must lie in (0, 1]", **{name: value})
    fidelity = p_outcome_given_state * p_state / p_outcome
    if fidelity > 1.0 + FIDELITY_SLACK:
        raise ValidationError("fidelity exceeds 1: P(\"x\"|x) P(x) > P(\"x\")",
                              p_outcome_given_state=p_outcome_given_state,
                              p_state=p_state, p_outcome=p_outcome, fidelity=fidelity)
    return fidelity


def outcome_given_state(model: MixtureModel, samples, labels: NDArray[np.object_]) -> Dict[str, float]:
    """
    P("x"|x) estimada con el modelo

    Fracción de la masa posterior de x que cae en el círculo de x:
    sum(post_x sobre lecturas "x") / sum(post_x).
    """
    posterior = model.posterior(samples)
    estimate = {}
    for label in FIDELITY_LABELS:
        if label not in model.labels:
            continue
        column = posterior[:, model.labels.index(label)]
        estimate[label] = float(column[labels == label].sum() / column.sum())
    return estimate


def fidelity_report(model: MixtureModel, samples,
                    p_outcome_given_state: Optional[Dict[str, float]] = None,
                    radius_factor: float = DEFAULT_RADIUS_FACTOR) -> FidelityReport:
    """
    Fidelidades de lectura a partir de un conjunto de lecturas térmicas

    P(x) sale de los sectores de la mezcla y P("x") de los círculos de
    radio radius_factor*sigma. Sin P("x"|x) externos se estiman con el
    propio modelo. Unos P("x"|x) incompatibles con los datos (F > 1)
    producen ValidationError.
    """
    z = as_complex(samples)
    sectors = sector_probabilities(model, z)
    labels = classify_with_rejection(model, z, radius_factor)
    p_outcome = {label: float(np.mean(labels == label)) for label in model.labels}
    rejection = float(np.mean(labels == REJECTED))
    if p_outcome_given_state is None:
        p_outcome_given_state = outcome_given_state(model, z, labels)
    fidelities = {
        label: readout_fidelity(p_outcome_given_state[label], sectors[label], p_outcome[label])
        for label in p_outcome_given_state
    }
    report = FidelityReport(sectors, p_outcome, dict(p_outcome_given_state), fidelities, rejection)
    get_log_manager().log_classification(report.to_dict())
    return report


# --- modelos de T1 -------------------------------------------------------------

def t1_repeat_probability(t_w: ArrayLike, T1: float, p_th: float):
    """Probabilidad de repetir el resultado x tras esperar t_w"""
    t_w = np.asarray(t_w, dtype=float)
    if np.any(t_w < 0) or T1 <= 0:
        raise ValidationError("t_w must be >= 0 and T1 > 0", T1=T1)
    value = (1.0 - p_th) * np.exp(-t_w / T1) + p_th
    return float(value) if value.ndim == 0 else value


def ground_population_decay(t: ArrayLike, T1: float, p_g_th: float):
    """p_g(t) partiendo de |g> hacia la población térmica"""
    return t1_repeat_probability(t, T1, p_g_th)


def t1_from_repeat_probability(p_x: ArrayLike, t_w: float, p_th: float):
    """Invertir la probabilidad de repetición para obtener T1"""
    p_x = np.asarray(p_x, dtype=float)
    if t_w <= 0:
        raise ValidationError("t_w must be positive", t_w=t_w)
    ratio = (p_x - p_th) / (1.0 - p_th)
    if np.any(ratio <= 0) or np.any(ratio >= 1):
        raise ValidationError("repeat probability outside (p_th, 1)", p_th=p_th)
    value = -t_w / np.log(ratio)
    return float(value) if value.ndim == 0 else value


def t1_batch_filter(t1_values: ArrayLike, center: float = 5.5e-6,
                    half_width: float = 0.3e-6) -> NDArray[np.bool_]:
    """Conservar los lotes con T1 dentro de center +/- half_width"""
    t1_values = np.asarray(t1_values, dtype=float)
    keep = np.abs(t1_values - center) <= half_width
    logger.info(f"Filtro de T1: se conservan {int(keep.sum())} de {keep.size} lotes")
    return keep


def conditional_outcome_model(t_w: ArrayLike, T1: float, p_g_th: float,
                              P_gg0: float, P_ge0: float):
    """P("g"|g)(t_w) = p_g(t_w) P_gg0 + (1 - p_g(t_w)) P_ge0"""
    for name, value in (("p_g_th", p_g_th), ("P_gg0", P_gg0), ("P_ge0", P_ge0)):
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"{name} must lie in [0, 1]", **{name: value})
    p_g = ground_population_decay(t_w, T1, p_g_th)
    return p_g * P_gg0 + (1.0 - p_g) * P_ge0


def fit_conditional_model(t_w: ArrayLike, probability: ArrayLike, T1: float,
                          p_g_th: float, max_iter: int = 200) -> ConditionalFit:
    """
    Ajustar (P_gg0, P_ge0) por mínimos cuadrados acotados a [0, 1]

    El modelo es lineal en los dos parámetros, así que se resuelve con
    mínimos cuadrados de variables acotadas.
    """
    t_w = np.asarray(t_w, dtype=float)
    probability = np.asarray(probability, dtype=float)
    if t_w.size < 4 or t_w.size != probability.size:
        raise ValidationError("need at least 4 (t_w, probability) points", points=t_w.size)
    if t_w.max() - t_w.min() < 2.0 * T1 * (1.0 - 1e-9):
        raise ValidationError("t_w must span at least 2 T1", span=float(t_w.max() - t_w.min()), T1=T1)

    p_g = ground_population_decay(t_w, T1, p_g_th)
    design = np.column_stack([p_g, 1.0 - p_g])
    result = lsq_linear(design, probability, bounds=(0.0, 1.0), method="bvls", max_iter=max_iter)
    if not result.success:
        raise ConvergenceError("bounded least squares did not converge",
                               status=result.status, message=result.message)
    residual = design @ result.x - probability
    fit = ConditionalFit(float(result.x[0]), float(result.x[1]),
                         float(np.sqrt(np.mean(residual ** 2))), int(result.nit))
    get_log_manager().log_fit_result("conditional_model",
                                     {"P_gg0": fit.P_gg0, "P_ge0": fit.P_ge0}, fit.residual_rms)
    return fit


# --- potencia -> flujo ---------------------------------------------------------

def power_to_flux(rec: PowerRecord) -> NDArray[np.float64]:
    """n_m(t) = (Omega_a^2 / 4 Gamma_a) (p_raw - p_vac) / (p_ref - p_c - p_vac)"""
    denominator = rec.p_ref - rec.p_c_plus_vac
    if denominator <= 0:
        raise ValidationError("non-positive calibration denominator", denominator=denominator)
    return rec.alpha_in_squared * (rec.p_raw - rec.p_vac) / denominator


def amplitude_to_field(i: ArrayLike, q: ArrayLike, rec: PowerRecord) -> NDArray[np.complex128]:
    """alpha_m(t) = (Omega_a / 2 sqrt(Gamma_a)) (I + iQ) / sqrt(p_ref - p_c - p_vac)"""
    denominator = rec.p_ref - rec.p_c_plus_vac
    if denominator <= 0:
        raise ValidationError("non-positive calibration denominator", denominator=denominator)
    signal = np.asarray(i, dtype=float) + 1j * np.asarray(q, dtype=float)
    return rec.omega_a / (2.0 * math.sqrt(rec.gamma_a)) * signal / math.sqrt(denominator)


def batch_power_to_flux(records: Sequence[PowerRecord]) -> NDArray[np.float64]:
    """Convertir cada lote con sus propias referencias y promediar los flujos"""
    if not records:
        raise ValidationError("at least one power record is required")
    fluxes = [power_to_flux(rec) for rec in records]
    if len({flux.shape for flux in fluxes}) != 1:
        raise ValidationError("power records must share their time grid")
    return np.mean(fluxes, axis=0)

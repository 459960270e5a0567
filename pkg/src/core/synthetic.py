"""
Gate Energetics - Datos sintéticos
Generadores con parámetros conocidos: lecturas IQ, espectros de reflexión,
registros de potencia y curvas de decaimiento condicionado.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from core.calibration import (
    LABELS,
    TRANSIT,
    TRANSIT_WINDOW,
    GaussianComponent,
    MixtureModel,
    PowerRecord,
    TransitBand,
    conditional_outcome_model,
)
from core.error_processor import ValidationError
from core.fitting import BlochParams, ReflectionPoint, reflection_sweep

logger = logging.getLogger("gate_energetics.synthetic")

THERMAL_WEIGHTS = (0.892, 0.088, 0.02)


@dataclass
class SyntheticIQ:
    samples: NDArray[np.complex128]
    labels: NDArray[np.object_]
    centers: Dict[str, complex]
    weights: Tuple[float, ...]
    sigma_iq: float
    transit_fraction: float

    def true_model(self) -> MixtureModel:
        """Mezcla con los parámetros del generador, con banda si hay lecturas en tránsito"""
        labels = LABELS[:len(self.weights)]
        total = float(sum(self.weights))
        components = [
            GaussianComponent(self.centers[label], self.sigma_iq, weight / total, label)
            for label, weight in zip(labels, self.weights)
        ]
        if self.transit_fraction == 0:
            return MixtureModel(components)
        band = TransitBand(self.centers["g"], self.centers["e"], self.sigma_iq, TRANSIT_WINDOW)
        return MixtureModel(components, transit=band, transit_weight=self.transit_fraction)


def readout_centers(sigma_iq: float, separation: float = 6.0) -> Dict[str, complex]:
    """Centros g, e, f separados separation*sigma; f queda más allá de e sobre el eje g->e"""
    step = separation * sigma_iq
    e = complex(step, 0.0)
    return {"g": 0j, "e": e, "f": e + step * complex(math.cos(math.pi / 4), math.sin(math.pi / 4))}


def generate_iq_samples(n: int, weights: Sequence[float] = THERMAL_WEIGHTS, sigma_iq: float = 1e-3,
                        seed: int = 0, transit_fraction: float = 0.0,
                        separation: float = 6.0) -> SyntheticIQ:
    """
    Lecturas IQ de un qubit térmico

    Una fracción transit_fraction de las lecturas corresponde a qubits que
    decaen durante la lectura: su centro cae en la mitad central del
    segmento g-e.
    """
    if n < 1:
        raise ValidationError("n must be positive", n=n)
    if not 0.0 <= transit_fraction < 1.0:
        raise ValidationError("transit_fraction must lie in [0, 1)", transit_fraction=transit_fraction)
    weights = tuple(float(w) for w in weights)
    if not 1 <= len(weights) <= 3 or abs(sum(weights) - 1.0) > 1e-9:
        raise ValidationError("weights must be 1 to 3 probabilities summing to 1", weights=weights)

    rng = np.random.default_rng(seed)
    centers = readout_centers(sigma_iq, separation)
    labels = np.array(LABELS[:len(weights)], dtype=object)

    n_transit = int(round(transit_fraction * n))
    n_clean = n - n_transit
    chosen = rng.choice(len(weights), size=n_clean, p=weights)
    means = np.array([centers[label] for label in labels])[chosen]
    position = rng.uniform(*TRANSIT_WINDOW, size=n_transit)
    transit = centers["g"] + position * (centers["e"] - centers["g"])

    mean = np.concatenate([means, transit])
    noise = sigma_iq * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    all_labels = np.concatenate([labels[chosen], np.full(n_transit, TRANSIT, dtype=object)])
    order = rng.permutation(n)
    return SyntheticIQ(
        samples=(mean + noise)[order],
        labels=all_labels[order],
        centers=centers,
        weights=weights,
        sigma_iq=sigma_iq,
        transit_fraction=transit_fraction,
    )


def reflection_detunings(gamma_2: float, n: int = 101, span: float = 25.0) -> NDArray[np.float64]:
    """delta = span * Gamma_2 * u^3 con u uniforme en [-1, 1]: denso cerca de la resonancia"""
    u = np.linspace(-1.0, 1.0, n)
    return span * gamma_2 * u ** 3


def generate_reflection_points(params: BlochParams, deltas: ArrayLike, noise: float = 0.0,
                               seed: int = 0, scale: complex = 1.0) -> List[ReflectionPoint]:
    """Espectro R(delta) multiplicado por una escala compleja y con ruido complejo de varianza noise^2"""
    deltas = np.asarray(deltas, dtype=float)
    values = scale * reflection_sweep(params, deltas)
    if noise > 0:
        rng = np.random.default_rng(seed)
        values = values + noise / math.sqrt(2.0) * (rng.standard_normal(deltas.size)
                                                   + 1j * rng.standard_normal(deltas.size))
    return [ReflectionPoint(float(d), complex(r)) for d, r in zip(deltas, values)]


def forward_power_record(flux: ArrayLike, gain: float, omega_a: float, gamma_a: float,
                         p_vac: float, p_c: float) -> PowerRecord:
    """Modelo directo de la cadena de medida: flujo (fotones/s) -> potencias (W)"""
    if gain <= 0:
        raise ValidationError("gain must be positive", gain=gain)
    flux = np.asarray(flux, dtype=float)
    alpha_in_squared = omega_a ** 2 / (4.0 * gamma_a)
    return PowerRecord(
        p_raw=gain * flux + p_vac,
        p_vac=p_vac,
        p_ref=gain * alpha_in_squared + p_c + p_vac,
        p_c_plus_vac=p_c + p_vac,
        omega_a=omega_a,
        gamma_a=gamma_a,
    )


def generate_decay_data(t_w: ArrayLike, T1: float, p_g_th: float, P_gg0: float, P_ge0: float,
                        noise: float = 0.0, seed: int = 0) -> NDArray[np.float64]:
    """P("g"|g)(t_w) del modelo condicionado con ruido gaussiano opcional"""
    values = np.asarray(conditional_outcome_model(t_w, T1, p_g_th, P_gg0, P_ge0), dtype=float)
    if noise > 0:
        values = values + noise * np.random.default_rng(seed).standard_normal(values.shape)
    return values


def waiting_times(T1: float, points: int = 20, span: float = 2.0) -> NDArray[np.float64]:
    return np.linspace(0.0, span * T1, points)


def power_batches(flux: ArrayLike, gains: Sequence[float], omega_a: float, gamma_a: float,
                  p_vac: float, p_c: float, noise: float = 0.0,
                  seed: Optional[int] = None) -> List[PowerRecord]:
    """Lotes con ganancias distintas (deriva lenta de la cadena de amplificación)"""
    rng = np.random.default_rng(seed)
    records = []
    for gain in gains:
        record = forward_power_record(flux, gain, omega_a, gamma_a, p_vac, p_c)
        if noise > 0:
            jitter = noise * gain * rng.standard_normal(record.p_raw.shape)
            record = PowerRecord(record.p_raw + jitter, record.p_vac, record.p_ref,
                                 record.p_c_plus_vac, omega_a, gamma_a)
        records.append(record)
    return records

"""
Gate Energetics - Formatos de E/S
CSV con esquema fijo (pandas), informes JSON (ujson) y ficheros auxiliares YAML.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence, Union

import numpy as np
import pandas as pd
import ujson
import yaml

from core.error_processor import InputFileError

logger = logging.getLogger("gate_energetics.io_formats")

PathLike = Union[str, Path]

FLUX_COLUMNS = ("t_ns", "flux_none", "flux_g", "flux_e")
DYNAMICS_COLUMNS = ("t_ns", "sx", "sy", "sz", "E_gg", "E_ee", "Re_wv_sminus", "Im_wv_sminus")
SWEEP_COLUMNS = ("theta_over_pi", "n_in", "dn_none", "dn_g", "dn_e", "p_g", "p_e")
DISTRIBUTION_COLUMNS = ("n", "p_prior", "p_given_g", "p_given_e")
BACKACTION_COLUMNS = ("theta_over_pi", "dn_g", "dn_e_shifted_rescaled", "difference")
REFLECTION_COLUMNS = ("delta_hz", "re_r", "im_r")
IQ_COLUMNS = ("i_volts", "q_volts")
DECAY_COLUMNS = ("t_w_us", "probability")
POWER_COLUMNS = ("t_ns", "p_raw_W")
CALIBRATED_FLUX_COLUMNS = ("t_ns", "flux")
SIDECAR_KEYS = ("p_vac", "p_ref", "p_c_plus_vac", "omega_a", "gamma_a")


def write_csv(path: PathLike, columns: Mapping[str, Any], schema: Sequence[str]) -> Path:
    """Escribir columnas en el orden del esquema; la cabecera siempre está presente"""
    missing = [name for name in schema if name not in columns]
    if missing:
        raise ValueError(f"missing CSV columns {missing}")
    frame = pd.DataFrame({name: np.asarray(columns[name]) for name in schema}, columns=list(schema))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g")
    logger.info(f"CSV escrito: {path} ({len(frame)} filas)")
    return path


def read_csv(path: PathLike, schema: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"input file not found: {path}", path=str(path))
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InputFileError(f"cannot parse {path}: {exc}", path=str(path))
    missing = [name for name in schema if name not in frame.columns]
    if missing:
        raise InputFileError(f"{path} lacks columns {missing}", path=str(path), columns=list(frame.columns))
    return frame[list(schema)]


def write_json(path: PathLike, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ujson.dumps(data, indent=2))
    logger.info(f"JSON escrito: {path}")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"input file not found: {path}", path=str(path))
    return ujson.loads(path.read_text())


def write_sidecar(path: PathLike, scalars: Mapping[str, float]) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump({key: float(value) for key, value in scalars.items()}, sort_keys=False))
    return path


def read_sidecar(path: PathLike) -> Dict[str, float]:
    """Escalares de calibración de un fichero clave-valor"""
    path = Path(path)
    if not path.is_file():
        raise InputFileError(f"sidecar file not found: {path}", path=str(path))
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise InputFileError(f"cannot parse {path}: {exc}", path=str(path))
    missing = [key for key in SIDECAR_KEYS if key not in raw]
    if missing:
        raise InputFileError(f"{path} lacks keys {missing}", path=str(path))
    return {key: float(value) for key, value in raw.items()}


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".yaml")


def dynamics_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".dynamics.csv")

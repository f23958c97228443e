"""
Writers for run outputs.

CSV for per-iteration and per-face columns, JSON for summaries, OBJ for
geometry. Numbers are written with full precision so reports can be diffed
between runs.
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .mesh import write_obj

logger = logging.getLogger(__name__)


def _plain(value):
    """JSON-safe copy of numpy scalars and arrays."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def write_json(path, data: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")
    logger.debug(f"Wrote {path}")
    return path


def write_rows(path, rows, fieldnames=None) -> Path:
    """Write dict rows as CSV; the header comes from `fieldnames` or the first row."""
    path = Path(path)
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _plain(value) for key, value in row.items()})
    logger.debug(f"Wrote {len(rows)} rows to {path}")
    return path


TRACE_FIELDS = ["iteration", "sd_over_mean", "flips_pre", "flips_post", "max_disp"]
ENERGY_FIELDS = ["iteration", "E_edem", "E_bc", "E", "a", "b", "c", "flips"]
FACE_FIELDS = ["face", "d_area", "mu_abs"]
MU_FIELDS = ["face", "mu_re", "mu_im", "mu_abs"]


def write_trace(path, trace) -> Path:
    return write_rows(path, trace.rows(), TRACE_FIELDS)


def write_energy(path, energy) -> Path:
    return write_rows(path, energy.rows(), ENERGY_FIELDS)


def write_faces(path, report) -> Path:
    return write_rows(path, report.face_rows(), FACE_FIELDS)


def write_mu(path, mu: np.ndarray) -> Path:
    mu = np.asarray(mu, dtype=complex)
    rows = (
        {"face": i, "mu_re": m.real, "mu_im": m.imag, "mu_abs": abs(m)}
        for i, m in enumerate(mu)
    )
    return write_rows(path, rows, MU_FIELDS)


def write_mesh(path, mesh) -> Path:
    path = Path(path)
    write_obj(path, mesh.vertices, mesh.faces)
    logger.debug(f"Wrote {mesh.n_vertices} vertices to {path}")
    return path

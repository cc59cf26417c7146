"""Plain-text matrix dumps and model/family serialization.

Matrix dump format: a header line ``rows cols`` followed by ``rows`` lines of
``cols`` values, row-major, written with 17 significant digits so a round
trip is exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .systems import StateSpaceModel


def write_matrix(path, M) -> Path:
    path = Path(path)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    rows, cols = M.shape
    lines = [f"{rows} {cols}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in M]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    text = path.read_text().split("\n")
    try:
        rows, cols = (int(t) for t in text[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}: malformed header {text[0]!r}") from exc
    if cols == 0:
        return np.zeros((rows, 0))
    body = [line for line in text[1:] if line.strip()]
    if len(body) != rows:
        raise ValueError(f"{path}: expected {rows} rows, found {len(body)}")
    M = np.array([[float(t) for t in line.split()] for line in body], dtype=float).reshape(rows, cols)
    return M


def save_model(model: StateSpaceModel, directory, prefix: str) -> dict:
    """Write ``A, B_e, [B_f], C, D`` dumps; returns a file map for a JSON header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in ("A", "B_e", "B_f", "C", "D"):
        M = getattr(model, name)
        if M is None:
            continue
        fname = f"{prefix}_{name}.txt"
        write_matrix(directory / fname, M)
        files[name] = fname
    return files


def load_model(directory, files: dict) -> StateSpaceModel:
    directory = Path(directory)
    mats = {name: read_matrix(directory / fname) for name, fname in files.items()}
    return StateSpaceModel(
        A=mats["A"], B_e=mats["B_e"], C=mats["C"], B_f=mats.get("B_f"), D=mats.get("D")
    )


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def export_plant_matrices(plant, directory) -> dict:
    """Dump every regime's ``A`` and ``B_e`` plus ``C_z`` for external oracle checks."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = {}
    for r in sorted(plant.A_by_regime):
        out[f"A_{r}"] = write_matrix(directory / f"A_{r}.txt", plant.A_by_regime[r].toarray())
        out[f"B_e_{r}"] = write_matrix(directory / f"B_e_{r}.txt", plant.B_by_regime[r].reshape(-1, 1))
    out["C_z"] = write_matrix(directory / "C_z.txt", plant.C_z)
    return out

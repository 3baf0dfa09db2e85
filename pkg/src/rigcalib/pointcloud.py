"""ASCII point-cloud files: one `x y z` line per point."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["load_xyz", "save_xyz"]


def save_xyz(path, points: np.ndarray) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = [f"{float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in points]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_xyz(path) -> np.ndarray:
    text = Path(path).read_text().strip()
    if not text:
        return np.zeros((0, 3))
    rows = [[float(v) for v in line.split()] for line in text.splitlines()]
    out = np.asarray(rows, dtype=float)
    if out.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns, got {out.shape[1]}")
    return out

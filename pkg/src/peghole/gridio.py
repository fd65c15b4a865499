"""File formats for grids and point clouds.

Binary grid (``T2I-GRID v1``): one ASCII header line

    T2I-GRID v1 <rows> <cols> <channels> <pitch_x> <pitch_y>\\n

followed by ``rows * cols * channels`` little-endian float64 values, row-major
with channels interleaved per pixel.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .tactile import ContactObservation

MAGIC = "T2I-GRID"
VERSION = "v1"


def write_grid(path, channels: list[np.ndarray], pitch: tuple[float, float]) -> None:
    arrs = [np.asarray(c, dtype="<f8") for c in channels]
    rows, cols = arrs[0].shape
    if any(a.shape != (rows, cols) for a in arrs):
        raise ValueError("all channels must share one shape")
    header = f"{MAGIC} {VERSION} {rows} {cols} {len(arrs)} {pitch[0]!r} {pitch[1]!r}\n"
    data = np.stack(arrs, axis=-1).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes(order="C"))


def read_grid(path) -> tuple[list[np.ndarray], tuple[float, float]]:
    """Return ``(channels, pitch)`` from a T2I-GRID file."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 7 or header[0] != MAGIC:
            raise ValueError(f"{path}: not a {MAGIC} file")
        if header[1] != VERSION:
            raise ValueError(f"{path}: unsupported version {header[1]}")
        rows, cols, nch = (int(v) for v in header[2:5])
        pitch = (float(header[5]), float(header[6]))
        raw = fh.read()
    expected = rows * cols * nch * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} data bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8").reshape(rows, cols, nch)
    return [np.array(data[..., k]) for k in range(nch)], pitch


def write_observation(path, obs: ContactObservation) -> None:
    """Height, gx and gy as a 3-channel grid."""
    write_grid(path, [obs.height.values, obs.gradients.gx, obs.gradients.gy], obs.gradients.pitch_mm)


def write_observation_csv(path, obs: ContactObservation) -> None:
    h, gx, gy = obs.height.values, obs.gradients.gx, obs.gradients.gy
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "h", "gx", "gy"])
        for r in range(h.shape[0]):
            for c in range(h.shape[1]):
                w.writerow([r, c, repr(float(h[r, c])), repr(float(gx[r, c])), repr(float(gy[r, c]))])


def write_cloud_csv(path, points: np.ndarray) -> None:
    points = np.asarray(points, dtype=float)
    names = ["x_mm", "y_mm", "z_mm"][: points.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerows([[repr(float(v)) for v in p] for p in points])


def read_cloud_csv(path) -> np.ndarray:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    return data

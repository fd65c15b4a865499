"""Analytic stand-in for a vision-based tactile sensor.

Contact is rendered as an indentation height map (positive = pressed into the
gel), softened by a Gaussian gel blur, differentiated into a gradient map and
perturbed with Gaussian slope noise.  The gradient map is what the rest of the
pipeline consumes.

Sensor frame: origin at the centre of the sensing area, x along columns, y along
rows, millimetres.  Pixel ``(r, c)`` has its centre at
``((c - (cols-1)/2) * dx, (r - (rows-1)/2) * dy)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .se2 import Pose2, apply, inverse
from .shapes import CrossSection, sample_boundary


class AssumptionViolation(ValueError):
    """The shape footprint does not fit inside the sensing area."""


@dataclass(frozen=True)
class SensorModel:
    width_px: int = 320
    height_px: int = 240
    area_mm: tuple[float, float] = (18.6, 14.3)
    press_depth_mm: float = 0.5
    gel_sigma_mm: float = 0.15
    gradient_noise_sigma: float = 0.02
    # Fraction of the footprint area that must lie inside the sensing area.
    min_visible_fraction: float = 0.8

    def __post_init__(self) -> None:
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("sensor resolution must be positive")
        if not (self.area_mm[0] > 0 and self.area_mm[1] > 0):
            raise ValueError("sensing area must be positive")
        if not self.press_depth_mm > 0:
            raise ValueError("press depth must be positive")
        if self.gel_sigma_mm < 0 or self.gradient_noise_sigma < 0:
            raise ValueError("gel sigma and noise sigma must be non-negative")
        if not 0 < self.min_visible_fraction <= 1:
            raise ValueError("min_visible_fraction must be in (0, 1]")
        object.__setattr__(self, "area_mm", (float(self.area_mm[0]), float(self.area_mm[1])))

    @property
    def pitch_mm(self) -> tuple[float, float]:
        return self.area_mm[0] / self.width_px, self.area_mm[1] / self.height_px

    @property
    def shape(self) -> tuple[int, int]:
        return self.height_px, self.width_px

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Sensor-frame x and y of every pixel centre, each ``(rows, cols)``."""
        dx, dy = self.pitch_mm
        xs = (np.arange(self.width_px) - (self.width_px - 1) / 2) * dx
        ys = (np.arange(self.height_px) - (self.height_px - 1) / 2) * dy
        return np.meshgrid(xs, ys)

    def cloud_from_sensor(self) -> Pose2:
        """Pose mapping sensor-frame points into point-cloud coordinates
        (``x = col * dx``, ``y = row * dy``)."""
        dx, dy = self.pitch_mm
        return Pose2(0.0, (self.width_px - 1) / 2 * dx, (self.height_px - 1) / 2 * dy)

    def with_overrides(self, **kw) -> SensorModel:
        if "area_mm" in kw:
            kw["area_mm"] = tuple(kw["area_mm"])
        return replace(self, **kw)

    def to_json(self) -> dict:
        return {
            "width_px": self.width_px,
            "height_px": self.height_px,
            "area_mm": list(self.area_mm),
            "press_depth_mm": self.press_depth_mm,
            "gel_sigma_mm": self.gel_sigma_mm,
            "gradient_noise_sigma": self.gradient_noise_sigma,
            "min_visible_fraction": self.min_visible_fraction,
        }


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    values: np.ndarray
    pitch_mm: tuple[float, float]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("grid values must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "pitch_mm", (float(self.pitch_mm[0]), float(self.pitch_mm[1])))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class GradientGrid:
    gx: np.ndarray
    gy: np.ndarray
    pitch_mm: tuple[float, float]

    def __post_init__(self) -> None:
        gx = np.asarray(self.gx, dtype=float)
        gy = np.asarray(self.gy, dtype=float)
        if gx.shape != gy.shape or gx.ndim != 2:
            raise ValueError("gx and gy must be 2-D arrays of equal shape")
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            raise ValueError("gradient values must be finite")
        gx.setflags(write=False)
        gy.setflags(write=False)
        object.__setattr__(self, "gx", gx)
        object.__setattr__(self, "gy", gy)
        object.__setattr__(self, "pitch_mm", (float(self.pitch_mm[0]), float(self.pitch_mm[1])))

    @property
    def rows(self) -> int:
        return self.gx.shape[0]

    @property
    def cols(self) -> int:
        return self.gx.shape[1]


@dataclass(frozen=True, eq=False)
class ContactObservation:
    height: ScalarGrid
    gradients: GradientGrid
    true_pose: Pose2
    side: str

    def __post_init__(self) -> None:
        if self.side not in ("peg", "hole"):
            raise ValueError(f"side must be 'peg' or 'hole', got {self.side!r}")
        if self.height.values.shape != self.gradients.gx.shape:
            raise ValueError("height and gradient grids differ in size")


def visible_fraction(shape: CrossSection, sensor: SensorModel, n: int = 160) -> float:
    """Approximate fraction of the outline's area lying inside the sensing area."""
    b = sample_boundary(shape, 256)
    lo, hi = b.min(axis=0), b.max(axis=0)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx, gy], axis=-1)
    inside = shape.outline.sdf(apply(inverse(shape.pose), pts)) < 0
    if not inside.any():
        return 0.0
    half_w, half_h = sensor.area_mm[0] / 2, sensor.area_mm[1] / 2
    on_sensor = (np.abs(gx) <= half_w) & (np.abs(gy) <= half_h)
    return float((inside & on_sensor).sum() / inside.sum())


def _check_footprint(shape: CrossSection, sensor: SensorModel) -> None:
    frac = visible_fraction(shape, sensor)
    if frac < sensor.min_visible_fraction:
        raise AssumptionViolation(
            f"only {frac:.1%} of the footprint lies on the sensing area "
            f"(need {sensor.min_visible_fraction:.0%}): contact must be observed within the sensor"
        )


def contact_indicator(shape: CrossSection, pose: Pose2, sensor: SensorModel) -> np.ndarray:
    """Boolean ``(rows, cols)`` mask of pixel centres strictly inside the posed shape."""
    xs, ys = sensor.pixel_centers()
    placed = shape.moved(pose)
    return np.asarray(placed.signed_distance(np.stack([xs, ys], axis=-1))) < 0


def gradients_from_height(h: ScalarGrid) -> GradientGrid:
    """Central differences inside, one-sided differences on the border."""
    if h.rows < 3 or h.cols < 3:
        raise ValueError("grid must be at least 3x3")
    dx, dy = h.pitch_mm
    gy, gx = np.gradient(h.values, dy, dx, edge_order=1)
    return GradientGrid(gx, gy, h.pitch_mm)


def add_noise(g: GradientGrid, sigma: float, seed) -> GradientGrid:
    """Add i.i.d. zero-mean Gaussian noise of std ``sigma`` to both channels."""
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    if sigma == 0:
        return g
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=(2,) + g.gx.shape)
    return GradientGrid(g.gx + noise[0], g.gy + noise[1], g.pitch_mm)


def _blur(values: np.ndarray, sensor: SensorModel) -> np.ndarray:
    if sensor.gel_sigma_mm == 0:
        return values
    dx, dy = sensor.pitch_mm
    return gaussian_filter(values, (sensor.gel_sigma_mm / dy, sensor.gel_sigma_mm / dx), mode="reflect")


def _render(mask: np.ndarray, pose, sensor, side, noise_sigma, seed) -> ContactObservation:
    height = _blur(mask * sensor.press_depth_mm, sensor)
    h = ScalarGrid(height, sensor.pitch_mm)
    g = gradients_from_height(h)
    sigma = sensor.gradient_noise_sigma if noise_sigma is None else noise_sigma
    g = add_noise(g, sigma, seed)
    return ContactObservation(h, g, pose, side)


def render_peg_contact(
    shape: CrossSection,
    pose: Pose2,
    sensor: SensorModel,
    seed=None,
    noise_sigma: float | None = None,
) -> ContactObservation:
    """Peg end face pressed into the gel: indentation where the peg is."""
    _check_footprint(shape.moved(pose), sensor)
    mask = contact_indicator(shape, pose, sensor)
    return _render(mask.astype(float), pose, sensor, "peg", noise_sigma, seed)


def render_hole_contact(
    shape: CrossSection,
    pose: Pose2,
    sensor: SensorModel,
    seed=None,
    noise_sigma: float | None = None,
) -> ContactObservation:
    """Flat receptacle face pressed into the gel: indentation everywhere except the opening."""
    _check_footprint(shape.moved(pose), sensor)
    mask = ~contact_indicator(shape, pose, sensor)
    return _render(mask.astype(float), pose, sensor, "hole", noise_sigma, seed)


GRID_STEPS_MM = (-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0)
GRID_ANGLES_DEG = tuple(45.0 * k for k in range(8))


def perturbation_grid() -> list[Pose2]:
    """The 8 x 8 x 8 evaluation grid, x-major then y then rotation."""
    return [
        Pose2.from_degrees(th, dx, dy)
        for dx in GRID_STEPS_MM
        for dy in GRID_STEPS_MM
        for th in GRID_ANGLES_DEG
    ]


def random_perturbation(seed) -> Pose2:
    rng = np.random.default_rng(seed)
    dx, dy = rng.uniform(-4.0, 4.0, size=2)
    th = rng.uniform(0.0, 360.0)
    return Pose2.from_degrees(th, dx, dy)


def grid_offset_deg(pose: Pose2) -> float:
    """Rotation of a perturbation in [0, 360) degrees."""
    return math.degrees(pose.theta) % 360.0

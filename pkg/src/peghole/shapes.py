"""Parametric connector cross-sections with exact signed distances.

A :class:`CrossSection` is a primitive outline (circle, rounded rectangle or
simple polygon) placed by a :class:`~peghole.se2.Pose2`, optionally carrying
inner features that are added to or cut out of the outline.  All lengths are
in millimetres.  Signed distance is negative inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .se2 import Pose2, SymmetryGroup, apply, compose, inverse


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        return np.hypot(pts[..., 0], pts[..., 1]) - self.radius

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def perimeter(self) -> float:
        return 2.0 * math.pi * self.radius

    def boundary_at(self, s: np.ndarray) -> np.ndarray:
        a = s / self.radius
        return np.column_stack([self.radius * np.cos(a), self.radius * np.sin(a)])

    def to_json(self) -> dict:
        return {"variant": "circle", "radius": self.radius}


@dataclass(frozen=True)
class RoundedRect:
    width: float
    height: float
    corner_radius: float = 0.0

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError("rounded rect width and height must be positive")
        if self.corner_radius < 0 or self.corner_radius > min(self.width, self.height) / 2 + 1e-12:
            raise ValueError(
                f"corner radius {self.corner_radius} outside [0, {min(self.width, self.height) / 2}]"
            )

    @property
    def _half_core(self) -> tuple[float, float]:
        r = self.corner_radius
        return self.width / 2 - r, self.height / 2 - r

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        bx, by = self._half_core
        qx = np.abs(pts[..., 0]) - bx
        qy = np.abs(pts[..., 1]) - by
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        return outside + inside - self.corner_radius

    @property
    def area(self) -> float:
        r = self.corner_radius
        return self.width * self.height - (4.0 - math.pi) * r * r

    @property
    def perimeter(self) -> float:
        r = self.corner_radius
        return 2.0 * (self.width - 2 * r) + 2.0 * (self.height - 2 * r) + 2.0 * math.pi * r

    def boundary_at(self, s: np.ndarray) -> np.ndarray:
        # Walk counter-clockwise from the midpoint of the right edge:
        # right edge (upper half), top-right arc, top edge, ... closing on the right edge.
        bx, by = self._half_core
        r = self.corner_radius
        arc = 0.5 * math.pi * r
        pieces = [
            ("line", (bx + r, 0.0), (0.0, 1.0), by),
            ("arc", (bx, by), 0.0, arc),
            ("line", (bx, by + r), (-1.0, 0.0), 2 * bx),
            ("arc", (-bx, by), 0.5 * math.pi, arc),
            ("line", (-bx - r, by), (0.0, -1.0), 2 * by),
            ("arc", (-bx, -by), math.pi, arc),
            ("line", (-bx, -by - r), (1.0, 0.0), 2 * bx),
            ("arc", (bx, -by), 1.5 * math.pi, arc),
            ("line", (bx + r, -by), (0.0, 1.0), by),
        ]
        s = np.mod(np.asarray(s, dtype=float), self.perimeter)
        out = np.empty((s.size, 2))
        start = 0.0
        done = np.zeros(s.size, dtype=bool)
        for kind, origin, param, length in pieces:
            sel = ~done & (s <= start + length)
            u = s[sel] - start
            if kind == "line":
                out[sel, 0] = origin[0] + param[0] * u
                out[sel, 1] = origin[1] + param[1] * u
            else:
                a = param + (u / r if r > 0 else 0.0)
                out[sel, 0] = origin[0] + r * np.cos(a)
                out[sel, 1] = origin[1] + r * np.sin(a)
            done |= sel
            start += length
        # round-off at the very end of the perimeter
        out[~done] = (bx + r, 0.0)
        return out

    def to_json(self) -> dict:
        return {
            "variant": "rounded_rect",
            "width": self.width,
            "height": self.height,
            "corner_radius": self.corner_radius,
        }


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True)
class Polygon:
    """Simple polygon; vertices are stored counter-clockwise."""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        v = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(v) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        arr = np.array(v)
        signed = 0.5 * float(np.sum(arr[:, 0] * np.roll(arr[:, 1], -1) - np.roll(arr[:, 0], -1) * arr[:, 1]))
        if abs(signed) < 1e-15:
            raise ValueError("polygon is degenerate (zero area)")
        if signed < 0:
            v = v[::-1]
        n = len(v)
        for i in range(n):
            for j in range(i + 2, n):
                if i == 0 and j == n - 1:
                    continue
                if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise ValueError("polygon is self-intersecting")
        object.__setattr__(self, "vertices", v)

    @property
    def _arr(self) -> np.ndarray:
        return np.array(self.vertices)

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, 2)
        a = self._arr
        b = np.roll(a, -1, axis=0)
        px, py = flat[:, 0:1], flat[:, 1:2]
        ex, ey = (b - a)[:, 0], (b - a)[:, 1]
        wx, wy = px - a[:, 0], py - a[:, 1]
        t = np.clip((wx * ex + wy * ey) / (ex * ex + ey * ey), 0.0, 1.0)
        dist = np.hypot(wx - t * ex, wy - t * ey).min(axis=1)
        # winding number
        up = (a[:, 1] <= py) & (b[:, 1] > py)
        down = (a[:, 1] > py) & (b[:, 1] <= py)
        cross = ex * wy - ey * wx
        winding = np.sum(up & (cross > 0), axis=1) - np.sum(down & (cross < 0), axis=1)
        sd = np.where(winding != 0, -dist, dist)
        return sd.reshape(pts.shape[:-1])

    @property
    def area(self) -> float:
        a = self._arr
        return 0.5 * float(np.sum(a[:, 0] * np.roll(a[:, 1], -1) - np.roll(a[:, 0], -1) * a[:, 1]))

    @property
    def perimeter(self) -> float:
        a = self._arr
        return float(np.sum(np.linalg.norm(np.roll(a, -1, axis=0) - a, axis=1)))

    def boundary_at(self, s: np.ndarray) -> np.ndarray:
        a = self._arr
        b = np.roll(a, -1, axis=0)
        lengths = np.linalg.norm(b - a, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(lengths)])
        s = np.mod(np.asarray(s, dtype=float), cum[-1])
        idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(a) - 1)
        u = (s - cum[idx]) / lengths[idx]
        return a[idx] + u[:, None] * (b[idx] - a[idx])

    def to_json(self) -> dict:
        return {"variant": "polygon", "vertices": [list(v) for v in self.vertices]}


Primitive = Circle | RoundedRect | Polygon


@dataclass(frozen=True)
class CrossSection:
    """A primitive outline at ``pose`` plus optional inner features.

    Each feature is ``(op, CrossSection)`` with ``op`` in ``{"add", "subtract"}``;
    feature poses are relative to this section's frame.
    """

    outline: Primitive
    pose: Pose2 = field(default_factory=Pose2)
    features: tuple[tuple[str, CrossSection], ...] = ()

    def __post_init__(self) -> None:
        for op, _ in self.features:
            if op not in ("add", "subtract"):
                raise ValueError(f"feature op must be 'add' or 'subtract', got {op!r}")

    def moved(self, pose: Pose2) -> CrossSection:
        """The same section rigidly moved by ``pose`` (applied after the current placement)."""
        return replace(self, pose=compose(pose, self.pose))

    def local_sdf(self, local_pts: np.ndarray) -> np.ndarray:
        sd = self.outline.sdf(local_pts)
        for op, feat in self.features:
            fsd = feat.signed_distance(local_pts)
            sd = np.minimum(sd, fsd) if op == "add" else np.maximum(sd, -fsd)
        return sd

    def signed_distance(self, pts) -> np.ndarray | float:
        pts = np.asarray(pts, dtype=float)
        sd = self.local_sdf(apply(inverse(self.pose), pts))
        return float(sd) if sd.ndim == 0 else sd

    @property
    def area(self) -> float:
        """Area of the outline, ignoring inner features."""
        return self.outline.area

    @property
    def perimeter(self) -> float:
        return self.outline.perimeter

    def to_json(self) -> dict:
        d = self.outline.to_json()
        if self.pose != Pose2():
            d["pose"] = self.pose.to_json()
        if self.features:
            d["inner_features"] = [dict(feat.to_json(), op=op) for op, feat in self.features]
        return d

    @classmethod
    def from_json(cls, d: dict) -> CrossSection:
        variant = d["variant"]
        if variant == "circle":
            outline: Primitive = Circle(d["radius"])
        elif variant == "rounded_rect":
            outline = RoundedRect(d["width"], d["height"], d.get("corner_radius", 0.0))
        elif variant == "polygon":
            outline = Polygon(tuple(tuple(v) for v in d["vertices"]))
        else:
            raise ValueError(f"unknown cross-section variant {variant!r}")
        pose = Pose2.from_json(d["pose"]) if "pose" in d else Pose2()
        feats = tuple((f.get("op", "subtract"), cls.from_json(f)) for f in d.get("inner_features", []))
        return cls(outline, pose, feats)


def signed_distance(shape: CrossSection, point) -> np.ndarray | float:
    return shape.signed_distance(point)


def contains(shape: CrossSection, point) -> np.ndarray | bool:
    """Strict containment; boundary points are outside."""
    sd = shape.signed_distance(point)
    return bool(sd < 0) if np.ndim(sd) == 0 else sd < 0


def sample_boundary(shape: CrossSection, n: int) -> np.ndarray:
    """``n`` points spaced evenly by arc length along the outer outline."""
    if n < 1:
        raise ValueError("n must be positive")
    s = np.arange(n) * (shape.perimeter / n)
    return apply(shape.pose, shape.outline.boundary_at(s))


def outline_offset(outline: Primitive, clearance: float) -> Primitive:
    """Outline grown outward by ``clearance`` on every side (exact for circles and rounded rects)."""
    if isinstance(outline, Circle):
        return Circle(outline.radius + clearance)
    if isinstance(outline, RoundedRect):
        return RoundedRect(
            outline.width + 2 * clearance,
            outline.height + 2 * clearance,
            outline.corner_radius + clearance,
        )
    raise TypeError("offsetting polygons is not supported")


@dataclass(frozen=True)
class ConnectorPreset:
    name: str
    peg: CrossSection
    hole: CrossSection
    symmetry: SymmetryGroup

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "peg": self.peg.to_json(),
            "hole": self.hole.to_json(),
            "symmetry": self.symmetry.label,
        }

    @classmethod
    def from_json(cls, d: dict) -> ConnectorPreset:
        return cls(
            d["name"],
            CrossSection.from_json(d["peg"]),
            CrossSection.from_json(d["hole"]),
            SymmetryGroup.parse(d["symmetry"]),
        )


def _preset(
    name: str,
    peg: Primitive,
    clearance: float,
    sym: SymmetryGroup,
    tongue: RoundedRect | None = None,
) -> ConnectorPreset:
    feats = ((("subtract", CrossSection(tongue)),) if tongue is not None else ())
    hole = CrossSection(outline_offset(peg, clearance), features=feats)
    return ConnectorPreset(name, CrossSection(peg), hole, sym)


def preset_catalog() -> list[ConnectorPreset]:
    """Default connector approximations (dimensions are design defaults)."""
    return [
        _preset("audio_jack", Circle(1.75), 0.10, SymmetryGroup.circular()),
        _preset("lightning", RoundedRect(6.5, 1.5, 0.75), 0.15, SymmetryGroup.cyclic(2), RoundedRect(4.5, 0.5, 0.25)),
        _preset("usbc", RoundedRect(8.3, 2.5, 1.25), 0.10, SymmetryGroup.cyclic(2), RoundedRect(6.0, 0.5, 0.25)),
    ]


def get_preset(name: str) -> ConnectorPreset:
    for p in preset_catalog():
        if p.name == name:
            return p
    raise KeyError(f"unknown preset {name!r}; choose from {[p.name for p in preset_catalog()]}")


def hole_clearance(preset: ConnectorPreset, n: int = 2000) -> float:
    """Minimum gap between the centred peg outline and the hole outline (mm)."""
    return float(-np.max(preset.hole.signed_distance(sample_boundary(preset.peg, n))))

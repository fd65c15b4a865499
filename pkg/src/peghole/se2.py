"""Planar rigid transforms and the pose-error metrics used for evaluation.

Angles are radians internally and degrees at every reporting boundary
(``theta_deg`` in JSON, ``rot_error`` return values).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(theta: float) -> float:
    """Map an angle in radians to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    """SE(2) element: rotate by ``theta`` then translate by ``(tx, ty)`` (mm)."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(float(v)) for v in (self.theta, self.tx, self.ty)):
            raise ValueError(f"pose components must be finite, got {(self.theta, self.tx, self.ty)}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))

    @classmethod
    def identity(cls) -> Pose2:
        return cls()

    @classmethod
    def from_degrees(cls, theta_deg: float, tx: float = 0.0, ty: float = 0.0) -> Pose2:
        return cls(math.radians(theta_deg), tx, ty)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Pose2:
        m = np.asarray(m, dtype=float)
        return cls(math.atan2(m[1, 0], m[0, 0]), m[0, 2], m[1, 2])

    @property
    def t(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.theta)

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix."""
        m = np.eye(3)
        m[:2, :2] = rotation_matrix(self.theta)
        m[0, 2], m[1, 2] = self.tx, self.ty
        return m

    def to_json(self) -> dict:
        return {"theta_deg": self.theta_deg, "tx_mm": self.tx, "ty_mm": self.ty}

    @classmethod
    def from_json(cls, d: dict) -> Pose2:
        return cls.from_degrees(d["theta_deg"], d["tx_mm"], d["ty_mm"])

    def __matmul__(self, other: Pose2) -> Pose2:
        return compose(self, other)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Return ``a * b``: apply ``b`` first, then ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.theta + b.theta,
        c * b.tx - s * b.ty + a.tx,
        s * b.tx + c * b.ty + a.ty,
    )


def inverse(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    # -R(-theta) t
    return Pose2(-p.theta, -(c * p.tx + s * p.ty), -(-s * p.tx + c * p.ty))


def apply(p: Pose2, points) -> np.ndarray:
    """Transform a single point ``(2,)`` or an array of points ``(N, 2)``."""
    pts = np.asarray(points, dtype=float)
    c, s = math.cos(p.theta), math.sin(p.theta)
    x, y = pts[..., 0], pts[..., 1]
    return np.stack([c * x - s * y + p.tx, s * x + c * y + p.ty], axis=-1)


def chain_pre_insertion(world_hole: Pose2, hole_peg: Pose2, peg_ee: Pose2) -> Pose2:
    """End-effector pose in the world frame from the hole pose, the estimated
    peg-in-hole pose and the known grasp offset.

    ``hole_peg`` is the pose of the peg expressed in the hole frame, i.e. the
    inverse of what :func:`peghole.registration.multi_init_register` returns.
    """
    return compose(compose(world_hole, hole_peg), peg_ee)


@dataclass(frozen=True)
class SymmetryGroup:
    """Rotational symmetry of a cross-section.

    ``order`` is ``None`` for full circular symmetry, otherwise n for C_n.
    """

    order: int | None = 1

    def __post_init__(self) -> None:
        if self.order is not None and self.order < 1:
            raise ValueError(f"symmetry order must be >= 1, got {self.order}")

    @classmethod
    def circular(cls) -> SymmetryGroup:
        return cls(None)

    @classmethod
    def cyclic(cls, n: int) -> SymmetryGroup:
        return cls(n)

    @property
    def is_circular(self) -> bool:
        return self.order is None

    @property
    def label(self) -> str:
        return "circular" if self.order is None else f"cyclic({self.order})"

    @classmethod
    def parse(cls, text: str) -> SymmetryGroup:
        text = text.strip().lower()
        if text == "circular":
            return cls.circular()
        if text.startswith("cyclic(") and text.endswith(")"):
            return cls.cyclic(int(text[7:-1]))
        raise ValueError(f"unknown symmetry {text!r}")


class UndefinedRotationError(ValueError):
    """Rotation error requested for a circularly symmetric shape."""


def trans_error(est: Pose2, gt: Pose2) -> float:
    """Euclidean distance between translations (mm)."""
    return math.hypot(est.tx - gt.tx, est.ty - gt.ty)


def _wrap_deg_abs(d: float) -> float:
    d = abs(math.remainder(d, 360.0))
    return d


def rot_error(est: Pose2, gt: Pose2, sym: SymmetryGroup = SymmetryGroup()) -> float:
    """Absolute rotation difference in degrees, folded by the symmetry group."""
    if sym.is_circular:
        raise UndefinedRotationError("rotation error is undefined for circular symmetry")
    return rot_error_deg(est.theta_deg, gt.theta_deg, sym)


def rot_error_deg(est_deg: float, gt_deg: float, sym: SymmetryGroup = SymmetryGroup()) -> float:
    if sym.is_circular:
        raise UndefinedRotationError("rotation error is undefined for circular symmetry")
    n = sym.order
    diff = est_deg - gt_deg
    return min(_wrap_deg_abs(diff - k * 360.0 / n) for k in range(n))

"""Planar ICP with a sweep of initial rotations, plus a 3D point-to-point ICP
used by the no-preprocessing ablation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import RegistrationError
from .se2 import Pose2, apply, compose


@dataclass(frozen=True)
class IcpParams:
    max_icp_iters: int = 50
    convergence_tol: float = 1e-4
    inlier_dist: float = 0.3
    delta_alpha: float = 10.0
    n_max_restarts: int = 1
    restart_jitter_mm: float = 0.2
    # The rotation sweep runs on at most this many peg points (evenly strided);
    # the winning candidate is then refined on the full cloud.  None disables.
    sweep_max_points: int | None = 300
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_icp_iters < 1 or self.n_max_restarts < 1:
            raise ValueError("iteration counts must be positive")
        if not (self.convergence_tol > 0 and self.inlier_dist > 0 and self.delta_alpha > 0):
            raise ValueError("tolerances and delta_alpha must be positive")
        steps = 360.0 / self.delta_alpha
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"delta_alpha={self.delta_alpha} does not divide 360")
        if self.sweep_max_points is not None and self.sweep_max_points < 3:
            raise ValueError("sweep_max_points must be at least 3")

    @property
    def alphas_deg(self) -> list[float]:
        return [k * self.delta_alpha for k in range(round(360.0 / self.delta_alpha))]

    def to_json(self) -> dict:
        return {
            "max_icp_iters": self.max_icp_iters,
            "convergence_tol": self.convergence_tol,
            "inlier_dist": self.inlier_dist,
            "delta_alpha": self.delta_alpha,
            "n_max_restarts": self.n_max_restarts,
            "restart_jitter_mm": self.restart_jitter_mm,
            "sweep_max_points": self.sweep_max_points,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class IcpResult:
    pose: Pose2
    inlier_ratio: float
    rmse: float
    iterations: int
    converged: bool
    # mean matched distance and mean squared matched distance at each matching step
    history: tuple[tuple[float, float], ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class Candidate:
    alpha_deg: float
    restart: int
    result: IcpResult | None
    failure: str | None = None


@dataclass(frozen=True)
class RegistrationResult:
    best: Pose2
    best_alpha: float
    best_inlier_ratio: float
    candidates: tuple[Candidate, ...]
    refined: IcpResult | None = None
    centroid: tuple[float, float] = (0.0, 0.0)


class _Index:
    """Nearest-neighbour lookup over a fixed 2D cloud with lowest-index tie-breaking."""

    def __init__(self, dst: np.ndarray):
        self.dst = np.asarray(dst, dtype=float)
        self.tree = cKDTree(self.dst)

    def query(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if len(self.dst) == 1:
            d = np.linalg.norm(pts - self.dst[0], axis=1)
            return np.zeros(len(pts), dtype=np.int64), d
        dist, idx = self.tree.query(pts, k=2)
        out_i = idx[:, 0].astype(np.int64)
        out_d = dist[:, 0]
        tied = np.flatnonzero(dist[:, 0] == dist[:, 1])
        for j in tied:
            d2 = np.sum((self.dst - pts[j]) ** 2, axis=1)
            k = int(np.argmin(d2))  # argmin returns the first minimum
            out_i[j], out_d[j] = k, math.sqrt(d2[k])
        return out_i, out_d


def nearest_correspondences(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Index of the nearest ``dst`` point for every ``src`` point."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("both clouds must be non-empty")
    return _Index(dst).query(src)[0]


def solve_rigid_2d(src: np.ndarray, dst: np.ndarray) -> Pose2:
    """Least-squares rigid transform taking ``src[i]`` onto ``dst[i]``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or len(src) < 2:
        raise ValueError("need at least two matched pairs of equal shape")
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - cs, dst - cd
    spread = float(np.sum(a * a))
    if spread <= 1e-24 * max(1.0, float(np.sum(src * src))):
        raise RegistrationError("rigid_solve", "source points coincide; rotation is indeterminate")
    sxx = float(np.dot(a[:, 0], b[:, 0]))
    syy = float(np.dot(a[:, 1], b[:, 1]))
    sxy = float(np.dot(a[:, 0], b[:, 1]))
    syx = float(np.dot(a[:, 1], b[:, 0]))
    theta = math.atan2(sxy - syx, sxx + syy)
    c, s = math.cos(theta), math.sin(theta)
    return Pose2(theta, cd[0] - (c * cs[0] - s * cs[1]), cd[1] - (s * cs[0] + c * cs[1]))


def compute_inlier_ratio(src_transformed: np.ndarray, dst: np.ndarray, inlier_dist: float) -> float:
    src_transformed = np.asarray(src_transformed, dtype=float).reshape(-1, 2)
    if len(src_transformed) == 0:
        raise ValueError("source cloud is empty")
    _, d = _Index(dst).query(src_transformed)
    return float(np.mean(d <= inlier_dist))


def icp_2d(
    src: np.ndarray,
    dst: np.ndarray,
    init: Pose2 = Pose2(),
    params: IcpParams = IcpParams(),
    index: _Index | None = None,
) -> IcpResult:
    """Point-to-point ICP in SE(2).

    Returns the full pose (``init`` included) mapping ``src`` onto ``dst``.
    Stops when the mean matched distance changes by less than
    ``convergence_tol`` or after ``max_icp_iters`` rigid updates.
    """
    src = np.asarray(src, dtype=float)
    if len(src) < 3 or len(dst) < 3:
        raise ValueError("ICP needs at least 3 points in each cloud")
    index = index or _Index(dst)
    pose = init
    prev = math.inf
    history = []
    converged = False
    solves = 0
    while True:
        moved = apply(pose, src)
        idx, dist = index.query(moved)
        mean = float(dist.mean())
        history.append((mean, float(np.mean(dist * dist))))
        if abs(prev - mean) < params.convergence_tol:
            converged = True
            break
        if solves == params.max_icp_iters:
            break
        try:
            step = solve_rigid_2d(moved, index.dst[idx])
        except RegistrationError as e:
            raise RegistrationError("icp", f"degenerate solve at iteration {solves + 1}: {e.msg}") from e
        pose = compose(step, pose)
        solves += 1
        prev = mean
    inl = dist <= params.inlier_dist
    rmse = float(np.sqrt(np.mean(dist[inl] ** 2))) if inl.any() else 0.0
    return IcpResult(pose, float(inl.mean()), rmse, solves, converged, tuple(history))


def _stride_subsample(points: np.ndarray, n_max: int | None) -> np.ndarray:
    if n_max is None or len(points) <= n_max:
        return points
    idx = np.floor(np.arange(n_max) * (len(points) / n_max)).astype(np.int64)
    return points[idx]


def _selection_key(c: Candidate) -> tuple:
    r = c.result
    return (-r.inlier_ratio, r.rmse, c.alpha_deg, c.restart)


def multi_init_register(peg: np.ndarray, hole: np.ndarray, params: IcpParams = IcpParams()) -> RegistrationResult:
    """Pose mapping peg-cloud coordinates onto hole-cloud coordinates.

    The peg cloud is centred on its centroid, rotated by every sweep angle,
    placed on the hole centroid and aligned by ICP; the candidate with the highest inlier ratio wins (ties:
    lower RMSE, then lower angle).  Because the rotation happens about the
    origin, the winner's pose already has rotation ``theta* + alpha*`` and
    translation ``t*``.
    """
    peg = np.asarray(peg, dtype=float)
    hole = np.asarray(hole, dtype=float)
    if len(peg) < 3 or len(hole) < 3:
        raise RegistrationError("register", "both clouds need at least 3 points")
    centroid = peg.mean(axis=0)
    centered = peg - centroid
    sweep_src = _stride_subsample(centered, params.sweep_max_points)
    index = _Index(hole)
    hole_centroid = hole.mean(axis=0)
    rng = np.random.default_rng(params.seed)

    candidates = []
    for restart in range(params.n_max_restarts):
        jitter = np.zeros(2) if restart == 0 else rng.uniform(-params.restart_jitter_mm, params.restart_jitter_mm, 2)
        start = hole_centroid + jitter
        for alpha in params.alphas_deg:
            init = Pose2(math.radians(alpha), start[0], start[1])
            try:
                res = icp_2d(sweep_src, hole, init, params, index)
                candidates.append(Candidate(alpha, restart, res))
            except RegistrationError as e:
                candidates.append(Candidate(alpha, restart, None, str(e)))

    ok = [c for c in candidates if c.result is not None]
    if not ok:
        reasons = "; ".join(f"alpha={c.alpha_deg:g}: {c.failure}" for c in candidates)
        raise RegistrationError("register", f"all initialisations failed: {reasons}")
    winner = min(ok, key=_selection_key)

    refined = None
    pose_c = winner.result.pose
    if len(sweep_src) < len(centered):
        refined = icp_2d(centered, hole, pose_c, params, index)
        pose_c = refined.pose
    best = compose(pose_c, Pose2(0.0, -centroid[0], -centroid[1]))
    return RegistrationResult(
        best,
        winner.alpha_deg,
        winner.result.inlier_ratio,
        tuple(candidates),
        refined,
        (float(centroid[0]), float(centroid[1])),
    )


def kabsch_3d(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares rigid 4x4 transform taking ``src[i]`` onto ``dst[i]``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = cd - r @ cs
    return m


def icp_3d(src: np.ndarray, dst: np.ndarray, params: IcpParams = IcpParams(), init: np.ndarray | None = None):
    """Point-to-point ICP on raw 3D clouds; returns ``(4x4 transform, iterations)``."""
    src = np.asarray(src, dtype=float)
    tree = cKDTree(dst)
    m = np.eye(4) if init is None else np.array(init, dtype=float)
    prev = math.inf
    iters = 0
    while True:
        moved = src @ m[:3, :3].T + m[:3, 3]
        dist, idx = tree.query(moved)
        mean = float(dist.mean())
        if abs(prev - mean) < params.convergence_tol or iters == params.max_icp_iters:
            break
        m = kabsch_3d(moved, dst[idx]) @ m
        iters += 1
        prev = mean
    return m, iters


def planar_pose_from_3d(m: np.ndarray) -> Pose2:
    """Drop out-of-plane components of a 3D rigid transform."""
    return Pose2(math.atan2(m[1, 0], m[0, 0]), m[0, 3], m[1, 3])

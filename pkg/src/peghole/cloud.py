"""Point-cloud preprocessing: hole inversion, height filtering, planar
projection and density-based background removal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import ContactLossError, PipelineError, UnusableObservationError
from .tactile import SensorModel

NOISE = -1


@dataclass(frozen=True)
class PipelineParams:
    """Preprocessing thresholds.  ``None`` fields are resolved from the sensor."""

    z_th: float | None = None
    dbscan_eps: float | None = None
    dbscan_min_pts: int = 8

    def resolved(self, sensor: SensorModel) -> PipelineParams:
        p = PipelineParams(
            0.5 * sensor.press_depth_mm if self.z_th is None else self.z_th,
            3.0 * max(sensor.pitch_mm) if self.dbscan_eps is None else self.dbscan_eps,
            self.dbscan_min_pts,
        )
        if p.z_th < 0 or p.dbscan_eps <= 0 or p.dbscan_min_pts < 1:
            raise ValueError(f"invalid pipeline parameters {p}")
        return p

    def to_json(self) -> dict:
        return {"z_th": self.z_th, "dbscan_eps": self.dbscan_eps, "dbscan_min_pts": self.dbscan_min_pts}


def flip_z(cloud: np.ndarray) -> np.ndarray:
    """Mirror heights about the cloud's top: ``z -> z_max - z``.

    The result is non-negative with its minimum at zero, so applying the flip
    twice returns a cloud shifted to ``z_min = 0`` (the input itself when its
    lowest point is already at zero).
    """
    cloud = np.asarray(cloud, dtype=float)
    if len(cloud) == 0:
        raise UnusableObservationError("flip", "cannot flip an empty cloud")
    out = cloud.copy()
    out[:, 2] = cloud[:, 2].max() - cloud[:, 2]
    return out


def height_filter(cloud: np.ndarray, z_th: float) -> np.ndarray:
    """Keep points strictly above ``z_th``."""
    cloud = np.asarray(cloud, dtype=float)
    kept = cloud[cloud[:, 2] > z_th]
    if len(kept) == 0:
        raise ContactLossError("filter", f"no points above z_th={z_th:g} mm")
    return kept


def project_to_plane(cloud: np.ndarray) -> np.ndarray:
    return np.array(np.asarray(cloud, dtype=float)[:, :2])


def _neighbor_pairs(points: np.ndarray, eps: float) -> np.ndarray:
    tree = cKDTree(points)
    pairs = tree.query_pairs(eps * (1 + 1e-9) + 1e-15, output_type="ndarray")
    if len(pairs):
        d2 = np.sum((points[pairs[:, 0]] - points[pairs[:, 1]]) ** 2, axis=1)
        pairs = pairs[d2 <= eps * eps]
    return pairs.reshape(-1, 2)


def dbscan_labels(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN labels (``-1`` for noise) with a deterministic scan in index order.

    A point is core when at least ``min_pts`` points, itself included, lie
    within ``eps``.  Clusters are numbered by their lowest-index core point,
    which is the order a sequential scan would create them in; a border point
    reachable from several clusters joins the earliest one.
    """
    if not eps > 0 or min_pts < 1:
        raise ValueError("dbscan needs eps > 0 and min_pts >= 1")
    points = np.asarray(points, dtype=float)
    n = len(points)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    pairs = _neighbor_pairs(points, eps)
    counts = 1 + np.bincount(pairs.ravel(), minlength=n)
    core = counts >= min_pts
    if not core.any():
        return labels

    cc = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]]
    graph = coo_matrix((np.ones(len(cc)), (cc[:, 0], cc[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    core_idx = np.flatnonzero(core)
    # rank components by their first core point
    first = {}
    for i in core_idx:
        first.setdefault(comp[i], len(first))
    rank = np.array([first[c] for c in comp[core_idx]])
    labels[core_idx] = rank

    # border points: core neighbour belonging to the earliest cluster
    both = np.concatenate([pairs, pairs[:, ::-1]])
    edge = both[core[both[:, 1]] & ~core[both[:, 0]]]
    if len(edge):
        best = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(best, edge[:, 0], labels[edge[:, 1]])
        border = np.unique(edge[:, 0])
        labels[border] = best[border]
    return labels


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Cluster ``points``; returns ``(clusters, noise)`` as point arrays."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    labels = dbscan_labels(points, eps, min_pts)
    k = labels.max() + 1 if len(labels) else 0
    clusters = [points[labels == i] for i in range(k)]
    return clusters, points[labels == NOISE]


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Hull vertices counter-clockwise (Andrew's monotone chain), collinear points dropped."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) < 3:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def shoelace_area(vertices: np.ndarray) -> float:
    v = np.asarray(vertices, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def convex_hull_area(points: np.ndarray) -> float:
    return shoelace_area(convex_hull(points))


def remove_background(clusters: list[np.ndarray], noise: np.ndarray | None = None) -> np.ndarray:
    """Drop the cluster with the largest hull area (and all noise).

    With a single cluster there is no background to remove and the cluster is
    returned as-is.  Ties on area go to the larger cluster, then the lower index.
    """
    if not clusters:
        raise UnusableObservationError("background", "DBSCAN found no clusters (all points are noise)")
    if len(clusters) == 1:
        return clusters[0]
    keys = [(convex_hull_area(c), len(c), -i) for i, c in enumerate(clusters)]
    drop = max(range(len(clusters)), key=lambda i: keys[i])
    return np.concatenate([c for i, c in enumerate(clusters) if i != drop])


def preprocess_peg(peg: np.ndarray, params: PipelineParams) -> np.ndarray:
    if len(peg) == 0:
        raise UnusableObservationError("peg", "peg cloud is empty")
    return project_to_plane(height_filter(peg, params.z_th))


def preprocess_hole(hole: np.ndarray, params: PipelineParams, stages: dict | None = None) -> np.ndarray:
    if len(hole) == 0:
        raise UnusableObservationError("hole", "hole cloud is empty")
    flipped = flip_z(hole)
    filtered = height_filter(flipped, params.z_th)
    planar = project_to_plane(filtered)
    clusters, noise = dbscan(planar, params.dbscan_eps, params.dbscan_min_pts)
    cleaned = remove_background(clusters, noise)
    if stages is not None:
        stages.update(hole_flipped=flipped, hole_filtered=filtered, hole_planar=planar, hole_cleaned=cleaned)
    return cleaned


def preprocess_pair(
    peg: np.ndarray,
    hole: np.ndarray,
    params: PipelineParams,
    stages: dict | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Planar peg and background-free planar hole clouds ready for registration.

    ``params`` must be resolved (no ``None`` fields).  When ``stages`` is a
    dict it is filled with the intermediate clouds.
    """
    if params.z_th is None or params.dbscan_eps is None:
        raise ValueError("pipeline parameters must be resolved against a sensor first")
    try:
        peg2 = preprocess_peg(peg, params)
    except PipelineError as e:
        e.stage = f"peg/{e.stage}"
        raise
    try:
        hole2 = preprocess_hole(hole, params, stages)
    except PipelineError as e:
        e.stage = f"hole/{e.stage}"
        raise
    if stages is not None:
        stages.update(peg_planar=peg2)
    return peg2, hole2

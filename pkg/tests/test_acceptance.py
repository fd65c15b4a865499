"""Acceptance suite: one verdict line per criterion.

Grid runs take several minutes each on one core; they are shared between
criteria through the session-scoped ``grid_cache`` fixture.
"""

from __future__ import annotations

import math
import time
from collections import deque

import numpy as np
import pytest

from conftest import record_verdict
from peghole.cli import main
from peghole.cloud import dbscan_labels
from peghole.reconstruction import divergence, integrate_gradients, laplacian_interior
from peghole.registration import IcpParams, icp_2d, nearest_correspondences
from peghole.se2 import Pose2, SymmetryGroup, apply, compose, inverse, rot_error_deg
from peghole.shapes import Polygon
from peghole.tactile import ScalarGrid, SensorModel, gradients_from_height

PRESETS = ("audio_jack", "lightning", "usbc")
C2_PRESETS = ("lightning", "usbc")
pytestmark = pytest.mark.slow


def test_c1_grid_accuracy(grid_cache):
    ok = True
    parts = []
    for name in PRESETS:
        stats, records, secs = grid_cache(name)
        good = len(records) == 512 and stats.trans_mean is not None and stats.trans_mean <= 1.0 and secs <= 600
        if name in C2_PRESETS:
            good = good and stats.rot_mean is not None and stats.rot_mean <= 6.0
            parts.append(f"{name} te={stats.trans_mean:.3f}mm re={stats.rot_mean:.2f}deg fail={stats.n_failed} t={secs:.0f}s")
        else:
            parts.append(f"{name} te={stats.trans_mean:.3f}mm fail={stats.n_failed} t={secs:.0f}s")
        ok &= good
    record_verdict("C1 grid accuracy (te<=1.0mm, C2 re<=6.0deg, <=10min)", ok, "; ".join(parts))
    assert ok


def test_c2_ablation_ordering(grid_cache):
    ok = True
    parts = []
    for name in PRESETS:
        full, _, _ = grid_cache(name)
        base, _, _ = grid_cache(name, "no_preprocess")
        ratio_t = base.trans_mean / full.trans_mean
        good = ratio_t >= 2.0
        part = f"{name} te {base.trans_mean:.2f}/{full.trans_mean:.3f}={ratio_t:.1f}x"
        if name in C2_PRESETS:
            ratio_r = base.rot_mean / full.rot_mean
            good = good and ratio_r >= 4.0
            part += f" re {base.rot_mean:.1f}/{full.rot_mean:.2f}={ratio_r:.1f}x"
        ok &= good
        parts.append(part)
    record_verdict("C2 ablation ordering (te>=2x, C2 re>=4x)", ok, "; ".join(parts))
    assert ok


def test_c3_noise_free_recovery(grid_cache):
    ok = True
    parts = []
    for name in C2_PRESETS:
        stats, records, _ = grid_cache(name, noise=0.0, gel_sigma=0.15)
        done = [r for r in records if not r.failed]
        success = len(done) / len(records)
        worst_t = max(r.trans_error for r in done)
        worst_r = max(r.rot_error for r in done)
        within = sum(r.trans_error <= 0.2 and r.rot_error <= 1.0 for r in done)
        good = success >= 0.99 and within == len(done)
        ok &= good
        parts.append(
            f"{name} success={success:.1%} within={within}/{len(done)} max_te={worst_t:.3f}mm max_re={worst_r:.2f}deg mean_re={stats.rot_mean:.2f}deg"
        )
    record_verdict("C3 noise-free recovery (every trial te<=0.2mm, re<=1.0deg; >=99% succeed)", ok, "; ".join(parts))
    assert ok


def random_bump(rng, rows=240, cols=320) -> np.ndarray:
    yy, xx = np.mgrid[0:rows, 0:cols]
    f = np.zeros((rows, cols))
    for _ in range(rng.integers(1, 5)):
        cy, cx = rng.uniform(0.3, 0.7) * rows, rng.uniform(0.3, 0.7) * cols
        sy, sx = rng.uniform(6, 22, 2)
        f += rng.uniform(0.05, 1.0) * np.exp(-((yy - cy) ** 2 / (2 * sy * sy) + (xx - cx) ** 2 / (2 * sx * sx)))
    return f


def test_c4_poisson_roundtrip():
    rng = np.random.default_rng(404)
    pitch = SensorModel().pitch_mm
    worst_rmse = worst_res = worst_t = 0.0
    for _ in range(50):
        h = random_bump(rng)
        g = gradients_from_height(ScalarGrid(h, pitch))
        t0 = time.perf_counter()
        f = integrate_gradients(g).values
        worst_t = max(worst_t, time.perf_counter() - t0)
        rhs = divergence(g)[1:-1, 1:-1]
        worst_res = max(worst_res, np.linalg.norm(laplacian_interior(f, pitch) - rhs) / np.linalg.norm(rhs))
        worst_rmse = max(worst_rmse, np.sqrt(np.mean((f - h) ** 2)) / h.max())
    ok = worst_rmse <= 0.01 and worst_res <= 1e-8 and worst_t <= 0.2
    record_verdict(
        "C4 Poisson round-trip (rmse<=1% max, residual<=1e-8, <=0.2s)",
        ok,
        f"worst rmse/max={worst_rmse:.2e} residual={worst_res:.2e} solve={worst_t * 1e3:.0f}ms",
    )
    assert ok


def test_c5_icp_oracle():
    rng = np.random.default_rng(505)
    worst_t = worst_r = 0.0
    for _ in range(1000):
        w, h = rng.uniform(6, 10), rng.uniform(4, 6)
        a, b = rng.uniform(1.5, 3, 2)
        poly = Polygon(((0, 0), (w, 0), (w, a), (b, a), (b, h), (0, h)))
        src = poly.boundary_at(rng.uniform(0, poly.perimeter, 300))
        r, phi = rng.uniform(0, 2), rng.uniform(0, 2 * math.pi)
        g = Pose2(math.radians(rng.uniform(-20, 20)), r * math.cos(phi), r * math.sin(phi))
        est = icp_2d(src, apply(g, src), Pose2(), IcpParams()).pose
        worst_t = max(worst_t, math.hypot(est.tx - g.tx, est.ty - g.ty))
        worst_r = max(worst_r, rot_error_deg(est.theta_deg, g.theta_deg))
    mismatches = 0
    for _ in range(100):
        src, dst = rng.normal(size=(2, 400, 2))
        if rng.random() < 0.3:
            src, dst = np.round(src * 4) / 4, np.round(dst * 4) / 4  # force exact ties
        brute = np.argmin(np.sum((src[:, None] - dst[None]) ** 2, axis=2), axis=1)
        mismatches += int(not np.array_equal(nearest_correspondences(src, dst), brute))
    ok = worst_t <= 0.01 and worst_r <= 0.1 and mismatches == 0
    record_verdict(
        "C5 ICP oracle (1000 transforms <=0.01mm/0.1deg; NN exact on 100)",
        ok,
        f"worst te={worst_t:.2e}mm re={worst_r:.2e}deg; NN mismatches={mismatches}/100",
    )
    assert ok


def brute_dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    n = len(points)
    d2 = np.sum((points[:, None] - points[None]) ** 2, axis=2)
    nbrs = [np.flatnonzero(d2[i] <= eps * eps) for i in range(n)]
    labels = np.full(n, -2)
    k = -1
    for i in range(n):
        if labels[i] != -2:
            continue
        if len(nbrs[i]) < min_pts:
            labels[i] = -1
            continue
        k += 1
        labels[i] = k
        queue = deque(nbrs[i])
        while queue:
            j = queue.popleft()
            if labels[j] == -1:
                labels[j] = k
            if labels[j] != -2:
                continue
            labels[j] = k
            if len(nbrs[j]) >= min_pts:
                queue.extend(nbrs[j])
    return labels


def canonical(labels) -> list:
    seen: dict = {}
    return [-1 if l < 0 else seen.setdefault(int(l), len(seen)) for l in labels]


def test_c6_dbscan_oracle():
    rng = np.random.default_rng(606)
    eps_values = (0.03, 0.05, 0.08, 0.12)
    min_values = (2, 4, 6, 10)
    failures = 0
    for i in range(100):
        pts = rng.uniform(0, 1, (200, 2))
        if i % 4 == 0:
            pts = np.round(pts * 25) / 25
        eps, m = eps_values[i % 4], min_values[(i // 4) % 4]
        failures += canonical(dbscan_labels(pts, eps, m)) != canonical(brute_dbscan(pts, eps, m))
    ok = failures == 0
    record_verdict("C6 DBSCAN oracle (100 instances)", ok, f"mismatches={failures}/100")
    assert ok


def test_c7_se2_properties():
    rng = np.random.default_rng(707)
    n = 10_000

    def rand_pose():
        return Pose2(rng.uniform(-math.pi, math.pi), *rng.uniform(-10, 10, 2))

    def close(a: Pose2, b: Pose2, tol: float) -> bool:
        return abs(math.remainder(a.theta - b.theta, 2 * math.pi)) <= tol and abs(a.tx - b.tx) <= tol and abs(a.ty - b.ty) <= tol

    bad = {"assoc": 0, "identity": 0, "inverse": 0, "apply": 0, "rot_fold": 0}
    for _ in range(n):
        a, b, c = rand_pose(), rand_pose(), rand_pose()
        bad["assoc"] += not close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-12)
        bad["identity"] += not (close(compose(Pose2(), a), a, 1e-12) and close(compose(a, Pose2()), a, 1e-12))
        bad["inverse"] += not (close(compose(inverse(a), a), Pose2(), 1e-12) and close(compose(a, inverse(a)), Pose2(), 1e-12))
        x = rng.uniform(-10, 10, 2)
        bad["apply"] += not np.allclose(apply(compose(a, b), x), apply(a, apply(b, x)), rtol=0, atol=1e-10)
        k = int(rng.integers(1, 7))
        sym = SymmetryGroup.cyclic(k)
        u, v = rng.uniform(-720, 720, 2)
        e = rot_error_deg(u, v, sym)
        bad["rot_fold"] += not (
            abs(e - rot_error_deg(v, u, sym)) <= 1e-9
            and abs(e - rot_error_deg(u + 360.0 / k, v, sym)) <= 1e-9
            and abs(e - rot_error_deg(u, v - 360.0 / k, sym)) <= 1e-9
            and 0 <= e <= 180.0 / k + 1e-9
        )
    ok = not any(bad.values())
    record_verdict("C7 SE(2) property suite (10,000 cases each)", ok, ", ".join(f"{k} failures={v}" for k, v in bad.items()))
    assert ok


def test_c8_determinism(tmp_path, capsys):
    args = ["experiment", "--preset", "usbc", "--mode", "random", "--trials", "8", "--seed", "88"]
    outputs = {}
    for tag, extra in (("serial_a", []), ("serial_b", []), ("parallel_a", ["--workers", "2"]), ("parallel_b", ["--workers", "3"])):
        assert main(args + ["--out", str(tmp_path / tag)] + extra) == 0
        outputs[tag] = (tmp_path / tag / "trials.csv").read_bytes()
    capsys.readouterr()
    ok = len(set(outputs.values())) == 1
    record_verdict("C8 determinism (byte-identical trials.csv, serial and parallel)", ok, f"{len(set(outputs.values()))} distinct file(s) over {len(outputs)} runs")
    assert ok

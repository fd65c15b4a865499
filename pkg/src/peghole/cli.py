"""Command-line entry point: ``peghole {simulate,estimate,experiment,baseline}``.

Errors are reported on stderr as one JSON line ``{"error": <category>,
"message": ...}`` with a nonzero exit code (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cloud import PipelineParams, preprocess_pair
from .errors import PipelineError
from .gridio import read_grid, write_cloud_csv, write_observation, write_observation_csv
from .harness import ConfigError, ExperimentConfig, emit_reports, run_trials
from .reconstruction import PoissonSolveError, height_to_cloud, integrate_gradients
from .registration import IcpParams, multi_init_register
from .se2 import Pose2, compose, inverse
from .shapes import get_preset
from .tactile import AssumptionViolation, GradientGrid, ScalarGrid, SensorModel, render_hole_contact, render_peg_contact

EXIT_CODES = {
    "config": 2,
    "io": 3,
    "contact_loss": 4,
    "unusable_observation": 4,
    "registration": 4,
    "pipeline": 4,
    "assumption_violation": 5,
    "poisson": 6,
}


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline / ICP")
    g.add_argument("--z-th", type=float, help="height threshold in mm (default: half the press depth)")
    g.add_argument("--eps", type=float, help="DBSCAN radius in mm (default: 3 pixel pitches)")
    g.add_argument("--min-pts", type=int, help="DBSCAN core-point count")
    g.add_argument("--max-iters", type=int, help="ICP iteration cap")
    g.add_argument("--tol", type=float, help="ICP convergence tolerance (mm)")
    g.add_argument("--inlier-dist", type=float, help="inlier distance (mm)")
    g.add_argument("--delta-alpha", type=float, help="rotation sweep step (deg)")
    g.add_argument("--restarts", type=int, help="jittered restarts per sweep")
    g.add_argument("--boundary", choices=("neumann", "dirichlet"), help="Poisson boundary condition")


def _pipeline_from(args, base: PipelineParams) -> PipelineParams:
    kw = {k: v for k, v in (("z_th", args.z_th), ("dbscan_eps", args.eps), ("dbscan_min_pts", args.min_pts)) if v is not None}
    return replace(base, **kw)


def _icp_from(args, base: IcpParams) -> IcpParams:
    pairs = (
        ("max_icp_iters", args.max_iters),
        ("convergence_tol", args.tol),
        ("inlier_dist", args.inlier_dist),
        ("delta_alpha", args.delta_alpha),
        ("n_max_restarts", args.restarts),
    )
    try:
        return replace(base, **{k: v for k, v in pairs if v is not None})
    except ValueError as e:
        raise ConfigError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="peghole", description="Tactile SE(2) peg-in-hole pose estimation")
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="render peg and hole contact observations")
    s.add_argument("--preset", required=True)
    s.add_argument("--dx", type=float, required=True, help="hole offset x (mm)")
    s.add_argument("--dy", type=float, required=True, help="hole offset y (mm)")
    s.add_argument("--dtheta", type=float, required=True, help="hole rotation (deg)")
    s.add_argument("--out", required=True)
    s.add_argument("--noise", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv", action="store_true", help="also write per-pixel CSV files")

    e = sub.add_parser("estimate", help="estimate the hole pose from two grid files")
    e.add_argument("--peg-grid", required=True)
    e.add_argument("--hole-grid", required=True)
    e.add_argument("--press-depth", type=float, default=SensorModel.press_depth_mm)
    e.add_argument("--dump-stages", metavar="DIR", help="write intermediate clouds to DIR")
    _add_pipeline_flags(e)

    for name, hlp in (("experiment", "run a batch of trials"), ("baseline", "no-preprocess 3D ICP ablation on the grid")):
        x = sub.add_parser(name, help=hlp)
        x.add_argument("--config", help="JSON config; flags override it")
        x.add_argument("--preset")
        x.add_argument("--out", required=True)
        x.add_argument("--noise", type=float)
        x.add_argument("--seed", type=int)
        x.add_argument("--workers", type=int)
        x.add_argument("--limit", type=int, help="run only the first N trials")
        if name == "experiment":
            x.add_argument("--mode", choices=("grid", "random"))
            x.add_argument("--trials", type=int, help="trial count in random mode")
            x.add_argument("--dump-stages", action="store_true")
            x.add_argument("--dump-candidates", action="store_true")
        _add_pipeline_flags(x)
    return ap


def _load_config(args) -> ExperimentConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise OSError(f"cannot read config {args.config}: {e.strerror}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON ({e})") from e
    cfg = ExperimentConfig.from_json(base)
    kw = {"out_dir": args.out}
    for key, val in (("preset", args.preset), ("noise_sigma", args.noise), ("seed", args.seed), ("workers", args.workers), ("limit", args.limit)):
        if val is not None:
            kw[key] = val
    if args.cmd == "experiment":
        if args.mode is not None:
            kw["mode"] = args.mode
        if args.trials is not None:
            kw["n_trials"] = args.trials
        kw["dump_stages"] = args.dump_stages or cfg.dump_stages
        kw["dump_candidates"] = args.dump_candidates or cfg.dump_candidates
    else:
        kw.update(mode="grid", baseline="no_preprocess")
    if args.boundary:
        kw["poisson_boundary"] = args.boundary
    kw["pipeline"] = _pipeline_from(args, cfg.pipeline)
    kw["icp"] = _icp_from(args, cfg.icp)
    return replace(cfg, **kw)


def cmd_simulate(args) -> int:
    try:
        preset = get_preset(args.preset)
    except KeyError as e:
        raise ConfigError(f"unknown preset {args.preset!r}") from e
    sensor = SensorModel()
    pose = Pose2.from_degrees(args.dtheta, args.dx, args.dy)
    peg = render_peg_contact(preset.peg, Pose2(), sensor, np.random.SeedSequence(args.seed, spawn_key=(0,)), args.noise)
    hole = render_hole_contact(preset.hole, pose, sensor, np.random.SeedSequence(args.seed, spawn_key=(1, 0)), args.noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_observation(out / "peg.t2i", peg)
    write_observation(out / "hole.t2i", hole)
    if args.csv:
        write_observation_csv(out / "peg.csv", peg)
        write_observation_csv(out / "hole.csv", hole)
    truth = {"preset": preset.name, "true_offset": pose.to_json(), "seed": args.seed, "sensor": sensor.to_json()}
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"peg": str(out / "peg.t2i"), "hole": str(out / "hole.t2i"), "true_offset": pose.to_json()}))
    return 0


def _grid_to_height(path, boundary: str) -> tuple[ScalarGrid, tuple[float, float], tuple[int, int]]:
    chans, pitch = read_grid(path)
    if len(chans) == 1:
        h = ScalarGrid(chans[0], pitch)
    else:
        gx, gy = (chans[0], chans[1]) if len(chans) == 2 else (chans[1], chans[2])
        h = integrate_gradients(GradientGrid(gx, gy, pitch), boundary=boundary)
    return h, pitch, chans[0].shape


def cmd_estimate(args) -> int:
    boundary = args.boundary or "neumann"
    hp, pitch, shape = _grid_to_height(args.peg_grid, boundary)
    hh, pitch2, shape2 = _grid_to_height(args.hole_grid, boundary)
    if shape != shape2 or pitch != pitch2:
        raise ConfigError("peg and hole grids differ in size or pitch")
    rows, cols = shape
    sensor = SensorModel(width_px=cols, height_px=rows, area_mm=(cols * pitch[0], rows * pitch[1]), press_depth_mm=args.press_depth)
    params = _pipeline_from(args, PipelineParams()).resolved(sensor)
    icp = _icp_from(args, IcpParams())
    stages = {} if args.dump_stages else None
    peg2, hole2 = preprocess_pair(height_to_cloud(hp), height_to_cloud(hh), params, stages)
    reg = multi_init_register(peg2, hole2, icp)
    c = sensor.cloud_from_sensor()
    est = compose(inverse(c), compose(reg.best, c))
    if stages is not None:
        d = Path(args.dump_stages)
        d.mkdir(parents=True, exist_ok=True)
        for name, pts in stages.items():
            write_cloud_csv(d / f"{name}.csv", pts)
    print(json.dumps({"pose": est.to_json(), "inlier_ratio": reg.best_inlier_ratio, "best_alpha_deg": reg.best_alpha}))
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    stats, records = run_trials(cfg)
    emit_reports(records, stats, cfg.out_dir, cfg)
    print(json.dumps(stats.to_json()))
    return 0


def _fail(category: str, msg: str) -> int:
    print(json.dumps({"error": category, "message": msg}), file=sys.stderr)
    return EXIT_CODES.get(category, 1)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"simulate": cmd_simulate, "estimate": cmd_estimate, "experiment": cmd_experiment, "baseline": cmd_experiment}
    try:
        return handlers[args.cmd](args)
    except ConfigError as e:
        return _fail("config", str(e))
    except PipelineError as e:
        return _fail(e.category, str(e))
    except AssumptionViolation as e:
        return _fail("assumption_violation", str(e))
    except PoissonSolveError as e:
        return _fail("poisson", str(e))
    except OSError as e:
        return _fail("io", str(e))
    except ValueError as e:
        return _fail("config", str(e))


if __name__ == "__main__":
    sys.exit(main())

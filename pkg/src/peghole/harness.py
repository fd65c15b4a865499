"""Simulation experiments: per-trial pipeline runs, aggregation and reports.

Every trial renders the hole at a known offset from the peg, runs the full
estimation pipeline and scores the estimate in the sensor frame.  The peg
observation is rendered once per experiment at the identity pose and shared.

Seeds: the peg noise uses ``SeedSequence(seed, spawn_key=(0,))``, trial ``i``
uses ``spawn_key=(1, i)`` for its hole noise and, in random mode,
``spawn_key=(2, i)`` for its offset.  Results therefore do not depend on
execution order or on the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .cloud import PipelineParams, flip_z, preprocess_pair
from .errors import PipelineError
from .gridio import write_cloud_csv
from .reconstruction import PoissonSolveError, height_to_cloud, integrate_gradients
from .registration import IcpParams, icp_3d, multi_init_register, planar_pose_from_3d
from .se2 import Pose2, compose, inverse, rot_error, trans_error
from .shapes import ConnectorPreset, get_preset
from .tactile import (
    AssumptionViolation,
    SensorModel,
    perturbation_grid,
    random_perturbation,
    render_hole_contact,
    render_peg_contact,
)

BASELINES = ("full", "no_preprocess")
MODES = ("grid", "random")

TRIAL_COLUMNS = (
    "trial_id",
    "true_theta_deg",
    "true_tx_mm",
    "true_ty_mm",
    "est_theta_deg",
    "est_tx_mm",
    "est_ty_mm",
    "trans_error_mm",
    "rot_error_deg",
    "inlier_ratio",
    "failed",
    "failure_stage",
    "failure_category",
    "failure_message",
)


class ConfigError(ValueError):
    category = "config"


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str | ConnectorPreset = "usbc"
    sensor_overrides: dict = field(default_factory=dict)
    pipeline: PipelineParams = PipelineParams()
    icp: IcpParams = IcpParams()
    noise_sigma: float | None = None  # None: use the sensor's gradient_noise_sigma
    seed: int = 0
    mode: str = "grid"
    n_trials: int = 1
    baseline: str = "full"
    out_dir: str | None = None
    poisson_boundary: str = "neumann"
    workers: int = 1
    dump_stages: bool = False
    dump_candidates: bool = False
    limit: int | None = None  # run only the first ``limit`` trials (smoke runs)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if self.mode == "random" and self.n_trials < 1:
            raise ConfigError("random mode needs n_trials >= 1")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.poisson_boundary not in ("dirichlet", "neumann"):
            raise ConfigError(f"unknown poisson_boundary {self.poisson_boundary!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.limit is not None and self.limit < 1:
            raise ConfigError("limit must be >= 1")
        if isinstance(self.preset, str):
            self.resolved_preset()
        self.sensor()

    def resolved_preset(self) -> ConnectorPreset:
        if isinstance(self.preset, ConnectorPreset):
            return self.preset
        try:
            return get_preset(self.preset)
        except KeyError as e:
            raise ConfigError(f"unknown preset {self.preset!r}") from e

    def sensor(self) -> SensorModel:
        try:
            return SensorModel().with_overrides(**self.sensor_overrides)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad sensor overrides {self.sensor_overrides}: {e}") from e

    def effective_noise(self) -> float:
        return self.sensor().gradient_noise_sigma if self.noise_sigma is None else self.noise_sigma

    def to_json(self) -> dict:
        """Fully resolved configuration (defaults filled in)."""
        sensor = self.sensor()
        return {
            "preset": self.resolved_preset().to_json(),
            "sensor": sensor.to_json(),
            "pipeline": self.pipeline.resolved(sensor).to_json(),
            "icp": self.icp.to_json(),
            "noise_sigma": self.effective_noise(),
            "seed": self.seed,
            "mode": self.mode,
            "n_trials": self.n_trials,
            "baseline": self.baseline,
            "out_dir": self.out_dir,
            "poisson_boundary": self.poisson_boundary,
            "workers": self.workers,
            "dump_stages": self.dump_stages,
            "dump_candidates": self.dump_candidates,
            "limit": self.limit,
        }

    @classmethod
    def from_json(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known - {"sensor"}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if isinstance(d.get("preset"), dict):
            d["preset"] = ConnectorPreset.from_json(d["preset"])
        if "sensor" in d:
            s = dict(d.pop("sensor"))
            if "area_mm" in s:
                s["area_mm"] = tuple(s["area_mm"])
            d.setdefault("sensor_overrides", s)
        try:
            if isinstance(d.get("pipeline"), dict):
                d["pipeline"] = PipelineParams(**d["pipeline"])
            if isinstance(d.get("icp"), dict):
                d["icp"] = IcpParams(**d["icp"])
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        return cls(**d)


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    true_offset: Pose2
    estimate: Pose2 | None = None
    trans_error: float | None = None
    rot_error: float | None = None  # None for circular symmetry and failures
    inlier_ratio: float | None = None
    timings_ms: dict = field(default_factory=dict, compare=False)
    failed: bool = False
    failure_stage: str | None = None
    failure_category: str | None = None
    failure_message: str | None = None

    def __post_init__(self) -> None:
        if self.failed and self.estimate is not None:
            raise ValueError("failed trials carry no estimate")
        for v in (self.trans_error, self.rot_error):
            if v is not None and not v >= 0:
                raise ValueError("errors must be non-negative")

    def row(self) -> dict:
        def num(v):
            return "" if v is None else repr(float(v))

        est = self.estimate
        return {
            "trial_id": self.trial_id,
            "true_theta_deg": num(self.true_offset.theta_deg),
            "true_tx_mm": num(self.true_offset.tx),
            "true_ty_mm": num(self.true_offset.ty),
            "est_theta_deg": num(est.theta_deg if est else None),
            "est_tx_mm": num(est.tx if est else None),
            "est_ty_mm": num(est.ty if est else None),
            "trans_error_mm": num(self.trans_error),
            "rot_error_deg": num(self.rot_error),
            "inlier_ratio": num(self.inlier_ratio),
            "failed": int(self.failed),
            "failure_stage": self.failure_stage or "",
            "failure_category": self.failure_category or "",
            "failure_message": self.failure_message or "",
        }


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


@dataclass(frozen=True)
class SummaryStats:
    """Means and sample standard deviations (ddof=1) over successful trials."""

    preset: str
    baseline: str
    n_trials: int
    n_failed: int
    trans_mean: float | None
    trans_std: float | None
    rot_mean: float | None
    rot_std: float | None

    def __post_init__(self) -> None:
        if not 0 <= self.n_failed <= self.n_trials:
            raise ValueError("inconsistent trial counts")
        for s in (self.trans_std, self.rot_std):
            if s is not None and s < 0:
                raise ValueError("standard deviation must be non-negative")

    @property
    def n_success(self) -> int:
        return self.n_trials - self.n_failed

    @classmethod
    def from_records(cls, preset: str, baseline: str, records: list[TrialRecord]) -> SummaryStats:
        ok = [r for r in records if not r.failed]
        tm, ts = _mean_std([r.trans_error for r in ok])
        rm, rs = _mean_std([r.rot_error for r in ok if r.rot_error is not None])
        return cls(preset, baseline, len(records), len(records) - len(ok), tm, ts, rm, rs)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> SummaryStats:
        return cls(**d)


@dataclass(frozen=True, eq=False)
class TrialContext:
    """Everything a trial needs, shared read-only across workers."""

    preset: ConnectorPreset
    sensor: SensorModel
    pipeline: PipelineParams  # resolved
    icp: IcpParams
    noise: float
    seed: int
    baseline: str
    boundary: str
    peg_cloud: np.ndarray | None = None  # None if the peg itself failed to render/reconstruct
    peg_failure: tuple[str, str, str] | None = None
    out_dir: str | None = None
    dump_stages: bool = False
    dump_candidates: bool = False


def _seed(master: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=key)


def _categorize(stage: str, e: Exception) -> tuple[str, str, str]:
    if isinstance(e, PipelineError):
        return e.stage, e.category, e.msg
    if isinstance(e, AssumptionViolation):
        return stage, "assumption_violation", str(e)
    if isinstance(e, PoissonSolveError):
        return stage, "poisson", str(e)
    return stage, "internal", f"{type(e).__name__}: {e}"


def _reconstruct(obs, ctx: TrialContext) -> np.ndarray:
    h = integrate_gradients(obs.gradients, boundary=ctx.boundary)
    return height_to_cloud(h, ctx.sensor)


def make_context(config: ExperimentConfig) -> TrialContext:
    sensor = config.sensor()
    preset = config.resolved_preset()
    ctx = TrialContext(
        preset,
        sensor,
        config.pipeline.resolved(sensor),
        config.icp,
        config.effective_noise(),
        config.seed,
        config.baseline,
        config.poisson_boundary,
        out_dir=config.out_dir,
        dump_stages=config.dump_stages,
        dump_candidates=config.dump_candidates,
    )
    stage = "peg/render"
    try:
        obs = render_peg_contact(preset.peg, Pose2(), sensor, _seed(config.seed, 0), ctx.noise)
        stage = "peg/reconstruct"
        cloud = _reconstruct(obs, ctx)
    except Exception as e:
        return replace(ctx, peg_failure=_categorize(stage, e))
    return replace(ctx, peg_cloud=cloud)


def _dump_stages(ctx: TrialContext, trial_id: int, stages: dict) -> None:
    d = Path(ctx.out_dir) / "stages"
    d.mkdir(parents=True, exist_ok=True)
    for name, pts in stages.items():
        write_cloud_csv(d / f"trial_{trial_id:04d}_{name}.csv", pts)


def _dump_candidates(ctx: TrialContext, trial_id: int, reg) -> None:
    d = Path(ctx.out_dir) / "candidates"
    d.mkdir(parents=True, exist_ok=True)
    cols = ["alpha_deg", "restart", "theta_deg", "tx_mm", "ty_mm", "inlier_ratio", "rmse", "iterations", "converged", "failure"]
    with open(d / f"trial_{trial_id:04d}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for c in reg.candidates:
            r = c.result
            if r is None:
                w.writerow([repr(c.alpha_deg), c.restart, "", "", "", "", "", "", "", c.failure])
            else:
                p = r.pose
                w.writerow([repr(c.alpha_deg), c.restart, repr(p.theta_deg), repr(p.tx), repr(p.ty),
                            repr(r.inlier_ratio), repr(r.rmse), r.iterations, int(r.converged), ""])


def _estimate_full(ctx: TrialContext, peg_cloud, hole_cloud, trial_id: int, timings: dict):
    stages = {} if ctx.dump_stages else None
    t0 = time.perf_counter()
    stage = "preprocess"
    try:
        peg2, hole2 = preprocess_pair(peg_cloud, hole_cloud, ctx.pipeline, stages)
        timings["preprocess"] = 1e3 * (time.perf_counter() - t0)
        t0 = time.perf_counter()
        stage = "register"
        reg = multi_init_register(peg2, hole2, ctx.icp)
        timings["register"] = 1e3 * (time.perf_counter() - t0)
    finally:
        if stages and ctx.out_dir:
            _dump_stages(ctx, trial_id, stages)
    if ctx.dump_candidates and ctx.out_dir:
        _dump_candidates(ctx, trial_id, reg)
    return reg.best, reg.best_inlier_ratio, stage


def _estimate_baseline(ctx: TrialContext, peg_cloud, hole_cloud, timings: dict):
    t0 = time.perf_counter()
    hole = flip_z(hole_cloud)
    timings["preprocess"] = 1e3 * (time.perf_counter() - t0)
    t0 = time.perf_counter()
    m, _ = icp_3d(peg_cloud, hole, ctx.icp)
    timings["register"] = 1e3 * (time.perf_counter() - t0)
    return planar_pose_from_3d(m), None


def execute_trial(ctx: TrialContext, trial_id: int, true_offset: Pose2, pipeline: PipelineParams | None = None) -> TrialRecord:
    """Run one trial against a prepared context; never raises for stage failures."""
    if pipeline is not None:
        ctx = replace(ctx, pipeline=pipeline)
    timings: dict = {}
    if ctx.peg_failure is not None:
        stage, cat, msg = ctx.peg_failure
        return TrialRecord(trial_id, true_offset, failed=True, failure_stage=stage, failure_category=cat, failure_message=msg)
    stage = "render"
    try:
        t0 = time.perf_counter()
        obs = render_hole_contact(ctx.preset.hole, true_offset, ctx.sensor, _seed(ctx.seed, 1, trial_id), ctx.noise)
        timings["render"] = 1e3 * (time.perf_counter() - t0)
        stage = "reconstruct"
        t0 = time.perf_counter()
        hole_cloud = _reconstruct(obs, ctx)
        timings["reconstruct"] = 1e3 * (time.perf_counter() - t0)
        stage = "estimate"
        if ctx.baseline == "full":
            est_cloud, inlier, stage = _estimate_full(ctx, ctx.peg_cloud, hole_cloud, trial_id, timings)
        else:
            stage = "register"
            est_cloud, inlier = _estimate_baseline(ctx, ctx.peg_cloud, hole_cloud, timings)
        stage = "evaluate"
        c = ctx.sensor.cloud_from_sensor()
        est = compose(inverse(c), compose(est_cloud, c))
        te = trans_error(est, true_offset)
        re = None if ctx.preset.symmetry.is_circular else rot_error(est, true_offset, ctx.preset.symmetry)
    except Exception as e:
        st, cat, msg = _categorize(stage, e)
        return TrialRecord(trial_id, true_offset, timings_ms=timings, failed=True,
                           failure_stage=st, failure_category=cat, failure_message=msg)
    return TrialRecord(trial_id, true_offset, est, te, re, inlier, timings)


def run_trial(preset: str | ConnectorPreset, true_offset: Pose2, config: ExperimentConfig = ExperimentConfig(), trial_id: int = 0) -> TrialRecord:
    """Render, reconstruct, preprocess and register a single offset."""
    ctx = make_context(replace(config, preset=preset))
    return execute_trial(ctx, trial_id, true_offset)


def trial_offsets(config: ExperimentConfig) -> list[Pose2]:
    if config.mode == "grid":
        offsets = perturbation_grid()
    else:
        offsets = [random_perturbation(_seed(config.seed, 2, i)) for i in range(config.n_trials)]
    return offsets[: config.limit]


def _run_one(ctx: TrialContext, overrides: dict, item: tuple[int, Pose2]) -> TrialRecord:
    i, pose = item
    return execute_trial(ctx, i, pose, overrides.get(i))


def run_trials(
    config: ExperimentConfig,
    offsets: list[Pose2] | None = None,
    pipeline_overrides: dict[int, PipelineParams] | None = None,
) -> tuple[SummaryStats, list[TrialRecord]]:
    """Run every offset (grid or random by ``config.mode``) and aggregate.

    ``pipeline_overrides`` maps trial ids to replacement (resolved) pipeline
    parameters, e.g. to inject a failure into a single trial.
    """
    ctx = make_context(config)
    offsets = trial_offsets(config) if offsets is None else offsets
    overrides = pipeline_overrides or {}
    items = list(enumerate(offsets))
    fn = partial(_run_one, ctx, overrides)
    if config.workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunk = max(1, len(items) // (4 * config.workers))
            records = list(pool.map(fn, items, chunksize=chunk))
    else:
        records = [fn(it) for it in items]
    stats = SummaryStats.from_records(ctx.preset.name, config.baseline, records)
    return stats, records


def run_grid_experiment(
    preset: str | ConnectorPreset,
    config: ExperimentConfig = ExperimentConfig(),
    pipeline_overrides: dict[int, PipelineParams] | None = None,
) -> tuple[SummaryStats, list[TrialRecord]]:
    """All 512 grid offsets through the full pipeline; reports go to ``config.out_dir`` if set."""
    config = replace(config, preset=preset, mode="grid", baseline="full")
    stats, records = run_trials(config, pipeline_overrides=pipeline_overrides)
    if config.out_dir:
        emit_reports(records, stats, config.out_dir, config)
    return stats, records


def run_baseline_no_preprocess(
    preset: str | ConnectorPreset,
    config: ExperimentConfig = ExperimentConfig(),
) -> tuple[SummaryStats, list[TrialRecord]]:
    """Same grid trials, but 3D ICP from identity on the raw (hole flipped) clouds."""
    config = replace(config, preset=preset, mode="grid", baseline="no_preprocess")
    stats, records = run_trials(config)
    if config.out_dir:
        emit_reports(records, stats, config.out_dir, config)
    return stats, records


def _metadata(config: ExperimentConfig) -> dict:
    meta = {
        "peg_pose": "identity, rendered once per experiment",
        "statistics": "mean and sample std (ddof=1) over successful trials",
        "estimate_frame": "sensor frame, hole offset relative to peg",
        "timings": "timings.csv (kept out of trials.csv so reruns are byte-identical)",
    }
    if config.baseline == "no_preprocess":
        meta["baseline_init"] = "single identity initialisation, 3D point-to-point ICP"
    return meta


def _write(path: Path, fn) -> None:
    try:
        fn(path)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


def emit_reports(records: list[TrialRecord], stats: SummaryStats, out_dir, config: ExperimentConfig | None = None) -> dict:
    """Write trials.csv, timings.csv and summary.json; returns their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create {out}: {e.strerror or e}") from e

    def trials(p):
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRIAL_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in records:
                w.writerow(r.row())

    stage_names = sorted({k for r in records for k in r.timings_ms})

    def timings(p):
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial_id"] + [f"{s}_ms" for s in stage_names])
            for r in records:
                w.writerow([r.trial_id] + [f"{r.timings_ms[s]:.3f}" if s in r.timings_ms else "" for s in stage_names])

    summary = {"stats": stats.to_json(), "version": __version__}
    if config is not None:
        summary.update(config=config.to_json(), seed=config.seed, metadata=_metadata(config))

    def summ(p):
        p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    paths = {"trials": out / "trials.csv", "timings": out / "timings.csv", "summary": out / "summary.json"}
    _write(paths["trials"], trials)
    _write(paths["timings"], timings)
    _write(paths["summary"], summ)
    return paths


def load_summary(path) -> SummaryStats:
    return SummaryStats.from_json(json.loads(Path(path).read_text())["stats"])


def read_trials_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


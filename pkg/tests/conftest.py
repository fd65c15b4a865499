"""Shared fixtures; acceptance verdicts are echoed in the terminal summary."""

from __future__ import annotations

import time

import pytest

from peghole.harness import ExperimentConfig, run_trials

ACCEPTANCE_LINES: list[str] = []


def record_verdict(label: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid_cache():
    """Memoised full-grid runs keyed by (preset, baseline, noise, gel sigma)."""
    cache: dict = {}

    def get(preset: str, baseline: str = "full", noise: float | None = None, gel_sigma: float | None = None):
        key = (preset, baseline, noise, gel_sigma)
        if key not in cache:
            overrides = {} if gel_sigma is None else {"gel_sigma_mm": gel_sigma}
            cfg = ExperimentConfig(preset=preset, baseline=baseline, noise_sigma=noise, sensor_overrides=overrides)
            t0 = time.perf_counter()
            stats, records = run_trials(cfg)
            cache[key] = (stats, records, time.perf_counter() - t0)
        return cache[key]

    return get

"""Shared fixtures. Pipeline artifacts are session scoped because they are expensive."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from reticle_switching.config import ScenarioConfig
from reticle_switching.pipeline import build_family, certify_family, plant_from_config, simulate

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"
ALL_STRATEGIES = ["status_quo", "proposed", "linear_only", "proposed_open_loop"]


@dataclass
class Pipeline:
    cfg: ScenarioConfig
    plant: object
    family: object
    reports: list
    cert: object
    trace: object
    metrics: object
    quiet_trace: object
    quiet_metrics: object


def _run(cfg: ScenarioConfig) -> Pipeline:
    cfg = cfg.with_overrides(strategies=ALL_STRATEGIES)
    plant = plant_from_config(cfg)
    family, reports = build_family(cfg, plant)
    cert = certify_family(cfg, plant, family)
    trace, metrics = simulate(cfg, plant, family)
    quiet_trace, quiet_metrics = simulate(cfg, plant, family, noise_std=0.0)
    return Pipeline(cfg, plant, family, reports, cert, trace, metrics, quiet_trace, quiet_metrics)


@pytest.fixture(scope="session")
def default_cfg() -> ScenarioConfig:
    return ScenarioConfig.load(CONFIG_DIR / "default.json")


@pytest.fixture(scope="session")
def small_cfg() -> ScenarioConfig:
    return ScenarioConfig.load(CONFIG_DIR / "small_area.json")


@pytest.fixture(scope="session")
def default_run(default_cfg) -> Pipeline:
    return _run(default_cfg)


@pytest.fixture(scope="session")
def small_run(small_cfg) -> Pipeline:
    return _run(small_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stable(rng, n, m=1, p=1, margin=0.1):
    """Random stable (A, B, C) with spectral abscissa at most ``-margin``."""
    A = rng.normal(size=(n, n))
    a = np.max(np.linalg.eigvals(A).real)
    A -= (a + margin + rng.uniform(0, 1)) * np.eye(n)
    return A, rng.normal(size=(n, m)), rng.normal(size=(p, n))


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)

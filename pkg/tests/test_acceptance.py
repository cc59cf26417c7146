"""Acceptance suite: one PASS/FAIL line per criterion, repeated in the terminal summary."""

import shutil
import time

import numpy as np
import pytest

from reticle_switching import cli
from reticle_switching.harness import throughput_report
from reticle_switching.pipeline import lotplan_from_config, predictor_layout
from reticle_switching.plant import PlantConfig, build_plant, full_field_area
from reticle_switching.predictor import gamma_map
from reticle_switching.reduction import compute_moments, krylov_reduce, moment_report
from reticle_switching.stability import certify_guas, close_lft, empirical_ultimate_bound

from .conftest import CONFIG_DIR
from .test_plant import exponential_r2, exposure_transient

pytestmark = pytest.mark.acceptance
RESULTS: list[str] = []


def verdict(n: int, ok: bool, detail: str):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_c01_moment_matching(default_run):
    errs = [r["max_relative_error"] for r in default_run.reports]
    plant = build_plant(PlantConfig(grid_nx=41, grid_ny=41), full_field_area())
    full = plant.state_space(0)
    t0 = time.perf_counter()
    red = krylov_reduce(full, 0.0, 3)
    elapsed = time.perf_counter() - t0
    big = moment_report(full, red)["max_relative_error"]
    assert len(compute_moments(full, 0.0, 3)) == 3
    worst = max(errs + [big])
    verdict(1, worst <= 1e-8 and elapsed <= 10.0, f"max relative moment error {worst:.2e} (<= 1e-8); n={full.n_states} reduced in {elapsed:.2f} s (<= 10 s)")


def test_c02_exponential_heating(default_run):
    t, mean, _ = exposure_transient(default_run.plant)
    r2, tau = exponential_r2(t, mean)
    verdict(2, r2 >= 0.99, f"R^2 {r2:.5f} (>= 0.99), tau {tau:.1f} s")


def test_c03_nominal_equivalence(default_run):
    tr = default_run.trace
    sel = (tr.lot == 0) & (np.array(tr.phase) != "lot_swap")
    pure = bool(np.all(tr.true_regime[sel] == 0))
    gap = float(np.nanmax(tr.nominal_gap[sel]))
    verdict(3, pure and gap <= 1e-12, f"lot 1 pure nominal regime: {pure}; max |proposed - linear_only| {gap:.2e} nm (<= 1e-12)")


def test_c04_switching_benefit(default_run, small_run):
    parts, ok = [], True
    for name, run in (("full", default_run), ("small", small_run)):
        r = run.metrics.ratio_between("linear_only", "proposed")
        lot2 = [v for (lot, _), v in r.items() if lot == 1]
        hits = sum(v >= 2 for v in lot2)
        ok &= hits >= 0.75 * len(lot2)
        parts.append(f"{name}: {hits}/{len(lot2)} wafers >= 2x (min {min(lot2):.2f})")
    verdict(4, ok, "; ".join(parts) + " (need >= 75%)")


def test_c05_prediction_replaces_measurement(default_run, small_run):
    parts, ok = [], True
    for name, run in (("full", default_run), ("small", small_run)):
        r = run.quiet_metrics.ratio_between("proposed", "status_quo")
        hits = sum(v <= 1.1 for v in r.values())
        ok &= hits >= 0.9 * len(r)
        parts.append(f"{name}: {hits}/{len(r)} wafers <= 1.1x (max {max(r.values()):.3f})")
    verdict(5, ok, "; ".join(parts) + " (need >= 90%, noise off)")


def test_c06_throughput(default_run):
    lp = lotplan_from_config(default_run.cfg)
    full, skip = throughput_report(lp, False), throughput_report(lp, True)
    closed = 3600 / (full.cycle_s - lp.edge_mark_time) - 3600 / full.cycle_s
    ok = abs(full.cycle_s - 12.56) < 1e-12 and abs(skip.gain_wph - 7.0) <= 0.1 and abs(skip.gain_wph - closed) < 1e-12
    verdict(6, ok, f"cycle {full.cycle_s:.2f} s, gain {skip.gain_wph:.4f} wph (7.0 +/- 0.1)")


def test_c07_small_gain_certificate(default_run, small_run):
    cert = default_run.cert.certificate
    inflated = certify_guas(default_run.cert.gp, default_run.cert.delta.inflated(10.0))
    decays = {}
    for name, run in (("full", default_run), ("small", small_run)):
        c = run.cert
        if not c.certificate.passed:
            continue
        cl = close_lft(c.gp, c.delta)
        rows = slice(0, c.gp.C_z.shape[0])
        decays[name] = sum(empirical_ultimate_bound(cl, seed=s, z_rows=rows).decaying for s in range(100))
    ok = cert.passed and cert.margin > 0 and not inflated.passed and all(v >= 99 for v in decays.values())
    detail = (
        f"default margin {cert.margin:.3f}; x10 margin {inflated.margin:.3f}; "
        + ", ".join(f"{k} decaying {v}/100" for k, v in decays.items())
    )
    verdict(7, ok, detail)


def test_c08_handoff_continuity(default_run, small_run):
    jumps = [
        sw["jump"] for run in (default_run, small_run) for sw in run.trace.switches if sw["strategy"] == "proposed"
    ]
    worst = max(jumps)
    verdict(8, len(jumps) > 0 and worst <= 1e-9, f"{len(jumps)} switches, max jump {worst:.2e} nm (<= 1e-9)")


def test_c09_gamma_reconstruction(default_run):
    lay = predictor_layout(default_run.cfg, default_run.plant)
    rng = np.random.default_rng(9)
    worst = 0.0
    for r in default_run.family.regimes:
        m = default_run.family.member(r)
        assert lay.n_active >= m.order
        for _ in range(50):
            ref = m.C @ rng.normal(size=m.order)
            got = gamma_map(lay, lay.S @ ref, m, lam=1e-9)
            worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    verdict(9, worst <= 1e-6, f"{lay.n_active} marks, order {m.order}: max relative error {worst:.2e} (<= 1e-6, lambda 1e-9)")


def test_c10_determinism(tmp_path):
    cfg = str(CONFIG_DIR / "default.json")
    a, b = tmp_path / "a", tmp_path / "b"
    for cmd in ("reduce", "certify"):
        assert cli.main([cmd, "--config", cfg, "--out", str(a)]) == 0
    shutil.copytree(a, b)
    for out in (a, b):
        assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    names = ["per_wafer.csv", "trace.csv", "throughput.csv", "summary.json"]
    same = all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    verdict(10, same, f"{len(names)} output files byte-identical across runs: {same}")

import csv
import json
import shutil

import pytest

from reticle_switching import cli
from reticle_switching.config import ConfigError, ScenarioConfig
from reticle_switching.stability import AssumptionViolated

from .conftest import CONFIG_DIR

DEFAULT = str(CONFIG_DIR / "default.json")
INFLATED = str(CONFIG_DIR / "inflated_delta.json")


def run(*argv):
    return cli.main([str(a) for a in argv])


def write_cfg(tmp_path, **changes):
    d = ScenarioConfig().to_dict()
    for key, value in changes.items():
        if isinstance(value, dict):
            d[key].update(value)
        else:
            d[key] = value
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


def snapshot(out):
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    codes = [run(cmd, "--config", DEFAULT, "--out", out) for cmd in ("reduce", "certify", "simulate", "report")]
    return out, codes


class TestValidation:
    def test_k_zero(self, tmp_path):
        cfg = write_cfg(tmp_path, reduction={"k": 0})
        assert run("reduce", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_VALIDATION
        assert not (tmp_path / "o").exists()

    def test_duplicate_regimes(self, tmp_path):
        cfg = write_cfg(tmp_path, regimes=[0, 1, 1, 2])
        assert run("reduce", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_VALIDATION
        assert not (tmp_path / "o").exists()

    def test_unknown_key(self, tmp_path):
        cfg = write_cfg(tmp_path, feedback={"roh": 2.0})
        assert run("reduce", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_VALIDATION

    def test_missing_config_file(self, tmp_path):
        assert run("reduce", "--config", tmp_path / "nope.json", "--out", tmp_path / "o") == cli.EXIT_VALIDATION

    def test_missing_family(self, tmp_path):
        assert run("certify", "--config", DEFAULT, "--out", tmp_path) == cli.EXIT_VALIDATION
        assert run("simulate", "--config", DEFAULT, "--out", tmp_path) == cli.EXIT_VALIDATION
        assert not (tmp_path / "certificate.json").exists()

    def test_report_without_results(self, tmp_path):
        assert run("report", "--config", DEFAULT, "--out", tmp_path) == cli.EXIT_VALIDATION

    def test_config_hash_ignores_seed_and_output(self):
        a = ScenarioConfig()
        assert a.config_hash() == a.with_overrides(seed=9, output_dir="elsewhere").config_hash()
        assert a.config_hash() != a.with_overrides(noise_std=0.2).config_hash()

    def test_rules_must_target_configured_regimes(self):
        with pytest.raises(ConfigError, match="not configured"):
            ScenarioConfig.from_dict({"regimes": [0, 1]})


class TestPipeline:
    def test_exit_codes(self, pipeline_dir):
        assert pipeline_dir[1] == [0, 0, 0, 0]

    def test_moment_report(self, pipeline_dir):
        rep = json.loads((pipeline_dir[0] / "moment_report.json").read_text())
        assert rep["all_pass"]
        assert [r["regime"] for r in rep["regimes"]] == [0, 1, 2]
        assert all(r["k"] == 3 and r["order"] == 3 for r in rep["regimes"])

    def test_certificate(self, pipeline_dir):
        cert = json.loads((pipeline_dir[0] / "certificate.json").read_text())
        assert cert["pass"] is True and cert["margin"] > 0

    def test_per_wafer_table(self, pipeline_dir):
        with open(pipeline_dir[0] / "per_wafer.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        keys = {(r["lot"], r["wafer"], r["strategy"]) for r in rows}
        assert len(keys) == 2 * 16 * 3
        assert {r["axis"] for r in rows} == {"x", "y", "xy"}

    def test_summary(self, pipeline_dir):
        s = json.loads((pipeline_dir[0] / "summary.json").read_text())
        assert s["certified"] and not s["forced"]
        assert s["config_hash"] == ScenarioConfig.load(DEFAULT).config_hash()
        assert s["certificate"]["pass"] is True

    def test_no_staging_leftovers(self, pipeline_dir):
        assert not [p for p in pipeline_dir[0].iterdir() if p.name.startswith(".staging")]

    def test_refuses_overwrite(self, pipeline_dir):
        out = pipeline_dir[0]
        before = snapshot(out)
        for cmd in ("reduce", "certify", "simulate", "report"):
            assert run(cmd, "--config", DEFAULT, "--out", out) == cli.EXIT_VALIDATION
        assert snapshot(out) == before

    def test_overwrite_is_idempotent(self, pipeline_dir, tmp_path):
        out = tmp_path / "copy"
        shutil.copytree(pipeline_dir[0], out)
        before = snapshot(out)
        for cmd in ("reduce", "certify", "simulate", "report"):
            assert run(cmd, "--config", DEFAULT, "--out", out, "--overwrite") == 0
        assert snapshot(out) == before

    def test_seed_changes_noise_only(self, pipeline_dir, tmp_path):
        out = tmp_path / "seeded"
        shutil.copytree(pipeline_dir[0], out)
        assert run("simulate", "--config", DEFAULT, "--out", out, "--overwrite", "--seed", 7) == 0

        def regimes_and_rms(path):
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            return [(r["t_s"], r["strategy"], r["regime"]) for r in rows], [r["rms_nm"] for r in rows]

        reg_a, rms_a = regimes_and_rms(pipeline_dir[0] / "trace.csv")
        reg_b, rms_b = regimes_and_rms(out / "trace.csv")
        assert reg_a == reg_b
        assert rms_a != rms_b


class TestCertification:
    def test_inflated_delta_fails(self, pipeline_dir, tmp_path):
        out = tmp_path / "inflated"
        shutil.copytree(pipeline_dir[0] / "family", out / "family")
        assert run("certify", "--config", INFLATED, "--out", out) == cli.EXIT_CERT_FAIL
        assert json.loads((out / "certificate.json").read_text())["pass"] is False
        assert run("simulate", "--config", INFLATED, "--out", out) == cli.EXIT_CERT_FAIL
        assert not (out / "per_wafer.csv").exists()
        assert run("simulate", "--config", INFLATED, "--out", out, "--force") == 0
        s = json.loads((out / "summary.json").read_text())
        assert s["forced"] and not s["certified"]

    def test_family_from_other_config_rejected(self, pipeline_dir, tmp_path):
        out = tmp_path / "other"
        shutil.copytree(pipeline_dir[0], out)
        cfg = write_cfg(tmp_path, feedback={"rho": 1.2})
        assert run("simulate", "--config", cfg, "--out", out, "--overwrite") == cli.EXIT_VALIDATION

    def test_assumption_violation_code(self, pipeline_dir, tmp_path, monkeypatch):
        import reticle_switching.pipeline as pl

        def boom(*a, **k):
            raise AssumptionViolated("nominal loop unstable")

        monkeypatch.setattr(pl, "certify_family", boom)
        out = tmp_path / "assume"
        shutil.copytree(pipeline_dir[0] / "family", out / "family")
        assert run("certify", "--config", DEFAULT, "--out", out) == cli.EXIT_ASSUMPTION
        assert not (out / "certificate.json").exists()

    def test_runtime_error_code(self, tmp_path, monkeypatch):
        import reticle_switching.pipeline as pl

        def boom(*a, **k):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr(pl, "plant_from_config", boom)
        assert run("reduce", "--config", DEFAULT, "--out", tmp_path / "o") == cli.EXIT_RUNTIME


def test_determinism_across_directories(pipeline_dir, tmp_path):
    out = tmp_path / "again"
    for cmd in ("reduce", "certify", "simulate", "report"):
        assert run(cmd, "--config", DEFAULT, "--out", out) == 0
    assert snapshot(out) == snapshot(pipeline_dir[0])

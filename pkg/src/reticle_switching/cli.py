"""``reticle-switching`` command line: reduce, certify, simulate, report.

Exit codes: 0 ok, 1 validation or missing input, 2 certification failure,
3 runtime error, 4 nominal-loop assumption violated.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

from ._accel import backend_name
from .config import ConfigError, ScenarioConfig
from .harness import render_results
from .io import write_json
from .reduction import load_family, save_family
from .stability import AssumptionViolated, UnstableDelta

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CERT_FAIL = 2
EXIT_RUNTIME = 3
EXIT_ASSUMPTION = 4

FAMILY_DIR = "family"
MOMENT_REPORT = "moment_report.json"
CERTIFICATE = "certificate.json"
SIM_FILES = ("per_wafer.csv", "trace.csv", "throughput.csv", "summary.json")
REPORT = "report.txt"

log = logging.getLogger("reticle_switching.cli")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_config(args) -> ScenarioConfig:
    if args.config is None:
        cfg = ScenarioConfig()
    else:
        cfg = ScenarioConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _out_dir(args, cfg: ScenarioConfig) -> Path:
    return Path(args.out if args.out is not None else cfg.output_dir)


def _guard(paths: list[Path], overwrite: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not overwrite:
        raise CliError(f"refusing to overwrite existing outputs {existing}; pass --overwrite", EXIT_VALIDATION)


def _publish_files(out: Path, files: dict[str, str]) -> None:
    """Write all files to a staging dir, then move them into place."""
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        for name, text in files.items():
            (stage / name).write_text(text)
        for name in files:
            os.replace(stage / name, out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _read_certificate(out: Path) -> dict:
    path = out / CERTIFICATE
    if not path.exists():
        raise CliError(f"certificate not found: {path} (run 'certify' first)", EXIT_VALIDATION)
    return json.loads(path.read_text())


def _load_family_or_fail(out: Path):
    try:
        return load_family(out / FAMILY_DIR)
    except FileNotFoundError as exc:
        raise CliError(f"{exc} (run 'reduce' first)", EXIT_VALIDATION) from exc


def cmd_reduce(args) -> int:
    from .pipeline import build_family, plant_from_config

    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    _guard([out / FAMILY_DIR, out / MOMENT_REPORT], args.overwrite)
    plant = plant_from_config(cfg)
    family, reports = build_family(cfg, plant)

    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        save_family(family, stage / FAMILY_DIR)
        all_pass = all(r["max_relative_error"] <= 1e-8 for r in reports)
        write_json(stage / MOMENT_REPORT, {"all_pass": all_pass, "tolerance": 1e-8, "regimes": reports})
        if (out / FAMILY_DIR).exists():
            shutil.rmtree(out / FAMILY_DIR)
        os.replace(stage / FAMILY_DIR, out / FAMILY_DIR)
        os.replace(stage / MOMENT_REPORT, out / MOMENT_REPORT)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    print(f"reduced {len(reports)} regimes (k={cfg.reduction.k}); moment match {'pass' if all_pass else 'FAIL'}")
    for r in reports:
        print(f"  regime {r['regime']}: order {r['order']}, max relative moment error {r['max_relative_error']:.2e}")
    return EXIT_OK if all_pass else EXIT_RUNTIME


def cmd_certify(args) -> int:
    from .pipeline import certify_family, plant_from_config

    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    family = _load_family_or_fail(out)
    _guard([out / CERTIFICATE], args.overwrite)
    plant = plant_from_config(cfg)
    try:
        result = certify_family(cfg, plant, family)
    except AssumptionViolated as exc:
        raise CliError(f"assumption violated: {exc}", EXIT_ASSUMPTION) from exc
    except UnstableDelta as exc:
        raise CliError(f"unstable uncertainty: {exc}", EXIT_CERT_FAIL) from exc
    cert = result.certificate
    doc = cert.to_dict()
    doc["config_hash"] = cfg.config_hash()
    doc["delta_regime"] = result.delta.regime
    _publish_files(out, {CERTIFICATE: json.dumps(doc, indent=2, sort_keys=True) + "\n"})
    print(
        f"gamma={cert.gamma:.6g} delta_bound={cert.delta_bound:.6g} margin={cert.margin:.6g} "
        f"-> {'PASS' if cert.passed else 'FAIL'}"
    )
    return EXIT_OK if cert.passed else EXIT_CERT_FAIL


def cmd_simulate(args) -> int:
    from .pipeline import plant_from_config, simulate

    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    family = _load_family_or_fail(out)
    if family.metadata.get("model_hash") not in (None, cfg.model_hash()):
        raise CliError("model family was reduced from a different configuration; rerun 'reduce'", EXIT_VALIDATION)
    certified = False
    certificate = None
    try:
        certificate = _read_certificate(out)
        certified = bool(certificate.get("pass"))
    except CliError:
        if not args.force:
            raise
    if not certified and not args.force:
        raise CliError("certificate did not pass; rerun with --force to simulate anyway", EXIT_CERT_FAIL)
    _guard([out / f for f in SIM_FILES], args.overwrite)

    plant = plant_from_config(cfg)
    trace, metrics = simulate(cfg, plant, family)
    summary = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "certificate": certificate,
        "certified": certified,
        "forced": bool(args.force and not certified),
        "strategies": list(trace.strategies),
        "backend": backend_name(),
        "throughput": metrics.throughput,
    }
    _publish_files(out, render_results(trace, metrics, summary))
    n_w = len({(r.lot, r.wafer) for r in metrics.rows})
    print(f"simulated {trace.n_steps} steps, {n_w} wafers, strategies {', '.join(trace.strategies)} -> {out}")
    if not certified:
        print("WARNING: uncertified run (--force)")
    return EXIT_OK


def _mean(vals):
    return sum(vals) / len(vals) if vals else float("nan")


def cmd_report(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    pw = out / "per_wafer.csv"
    if not pw.exists():
        raise CliError(f"{pw} not found (run 'simulate' first)", EXIT_VALIDATION)
    _guard([out / REPORT], args.overwrite)
    rms: dict[tuple[str, int], list[float]] = {}
    with open(pw, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["axis"] == "xy":
                rms.setdefault((row["strategy"], int(row["lot"])), []).append(float(row["rms_nm"]))
    lines = ["mean per-wafer RMS overlay error over the image area [nm]", ""]
    strategies = sorted({s for s, _ in rms})
    lots = sorted({l for _, l in rms})
    lines.append("strategy".ljust(20) + "".join(f"lot {l}".rjust(14) for l in lots))
    for s in strategies:
        lines.append(s.ljust(20) + "".join(f"{_mean(rms.get((s, l), [])):14.5f}" for l in lots))
    lines.append("")
    tp = out / "throughput.csv"
    if tp.exists():
        with open(tp, newline="") as fh:
            for row in csv.DictReader(fh):
                lines.append(
                    f"{row['variant']}: cycle {float(row['cycle_s']):.2f} s, {float(row['wph']):.2f} wph, "
                    f"gain {float(row['gain_wph']):+.2f} wph"
                )
    text = "\n".join(lines) + "\n"
    _publish_files(out, {REPORT: text})
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reticle-switching", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("reduce", cmd_reduce, "reduce every regime, design gains, center the family"),
        ("certify", cmd_certify, "small-gain certificate of the stored family"),
        ("simulate", cmd_simulate, "run the lot scenario and write CSV/JSON results"),
        ("report", cmd_report, "summarize simulation results"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, default=None, help="scenario JSON (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", type=Path, default=None, help="output directory (default: config output_dir)")
        sp.add_argument("--force", action="store_true", help="simulate without a passing certificate")
        sp.add_argument("--overwrite", action="store_true", help="replace existing outputs")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - map everything else to the runtime exit code
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

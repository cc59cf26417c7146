"""Lot-level experiments: event timeline, strategy comparison, throughput, result files."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RBFInterpolator

from .layout import MarkLayout
from .plant import FullOrderPlant, ImageArea, plant_outputs, plant_step
from .predictor import (
    Event,
    PredictorState,
    RegimeTracker,
    Scheduler,
    handoff,
    handoff_jump,
    predictor_step,
)
from .reduction import ModelFamily

STRATEGIES = ("status_quo", "proposed", "linear_only", "proposed_open_loop")
DEFAULT_STRATEGIES = ("status_quo", "proposed", "linear_only")
PREDICTOR_GROUPS = frozenset({"top", "bottom"})
AXES = ("x", "y", "xy")


@dataclass(frozen=True)
class LotPlan:
    image_area: ImageArea
    layout: MarkLayout
    n_lots: int = 2
    wafers_per_lot: int = 16
    wafer_expose_time: float = 10.0
    wafer_swap_time: float = 2.26
    lot_swap_time: float = 120.0
    edge_mark_time: float = 0.3
    pellicle_on_reclamp: bool = False

    def __post_init__(self):
        if self.n_lots < 1 or self.wafers_per_lot < 1:
            raise ValueError("n_lots and wafers_per_lot must be >= 1")
        for name in ("wafer_expose_time", "wafer_swap_time", "lot_swap_time", "edge_mark_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class Step:
    t: float
    u_e: float
    lot: int
    wafer: int  # -1 outside a wafer exposure
    phase: str  # expose | swap | lot_swap
    measure: bool
    events: tuple[str, ...]


def build_timeline(plan: LotPlan, dt: float) -> list[Step]:
    """Step list on a ``dt`` grid; phase durations are rounded to whole steps."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n_exp = int(round(plan.wafer_expose_time / dt))
    n_swap = int(round(plan.wafer_swap_time / dt))
    n_lot = int(round(plan.lot_swap_time / dt))
    if n_exp < 1:
        raise ValueError(f"wafer_expose_time {plan.wafer_expose_time} s is shorter than one step of {dt} s")
    steps: list[Step] = []
    pending: list[str] = []  # events waiting for the next step boundary

    def add(u, lot, wafer, phase, measure=False, events=()):
        steps.append(Step(len(steps) * dt, u, lot, wafer, phase, measure, tuple(pending) + tuple(events)))
        pending.clear()

    for lot in range(plan.n_lots):
        pending += ["clamp", "lot_start"]
        if lot > 0 and plan.pellicle_on_reclamp:
            pending.append("pellicle_on")
        for w in range(plan.wafers_per_lot):
            add(1.0, lot, w, "expose", measure=True, events=("exposure_on", "measurement"))
            for _ in range(n_exp - 1):
                add(1.0, lot, w, "expose")
            pending.append("exposure_off")
            for _ in range(n_swap):
                add(0.0, lot, -1, "swap")
        if lot < plan.n_lots - 1:
            pending += ["lot_end", "unclamp"]
            for _ in range(n_lot):
                add(0.0, lot, -1, "lot_swap")
    return steps


@dataclass
class ScenarioTrace:
    strategies: tuple[str, ...]
    dt: float
    t: np.ndarray
    u_e: np.ndarray
    true_regime: np.ndarray
    lot: np.ndarray
    wafer: np.ndarray
    phase: tuple[str, ...]
    mean_temp: np.ndarray
    events: list[tuple[float, str]]
    step_rms: dict[str, np.ndarray]
    model_regime: dict[str, np.ndarray]
    xhat: dict[str, np.ndarray]
    nominal_gap: np.ndarray
    switches: list[dict]
    wafer_errors: dict[tuple[int, int, str], dict[str, tuple[float, float]]]
    seed: int | None = None
    z: np.ndarray | None = None
    zhat: dict[str, np.ndarray] | None = None

    @property
    def n_steps(self) -> int:
        return int(self.t.size)

    @classmethod
    def empty(cls, strategies=DEFAULT_STRATEGIES, dt: float = 0.5) -> "ScenarioTrace":
        z = np.zeros(0)
        return cls(
            tuple(strategies), dt, z, z, z.astype(int), z.astype(int), z.astype(int), (), z, [],
            {s: z for s in strategies}, {s: z.astype(int) for s in strategies}, {}, z, [], {},
        )


class _WaferAccumulator:
    def __init__(self):
        self.sq = {"x": 0.0, "y": 0.0}
        self.mx = {"x": 0.0, "y": 0.0}
        self.count = 0

    def add(self, ex: np.ndarray, ey: np.ndarray):
        self.sq["x"] += float(ex @ ex)
        self.sq["y"] += float(ey @ ey)
        self.mx["x"] = max(self.mx["x"], float(np.max(np.abs(ex))) if ex.size else 0.0)
        self.mx["y"] = max(self.mx["y"], float(np.max(np.abs(ey))) if ey.size else 0.0)
        self.count += ex.size

    def summary(self) -> dict[str, tuple[float, float]]:
        c = max(self.count, 1)
        out = {a: (self.mx[a], math.sqrt(self.sq[a] / c)) for a in ("x", "y")}
        out["xy"] = (max(self.mx["x"], self.mx["y"]), math.sqrt((self.sq["x"] + self.sq["y"]) / (2 * c)))
        return out


def _status_quo_field(positions: np.ndarray, y: np.ndarray, eval_pts: np.ndarray) -> np.ndarray:
    m = positions.shape[0]
    fx = RBFInterpolator(positions, y[:m], kernel="thin_plate_spline")(eval_pts)
    fy = RBFInterpolator(positions, y[m:], kernel="thin_plate_spline")(eval_pts)
    return np.concatenate([fx, fy])


def run_scenario(
    plant: FullOrderPlant,
    family: ModelFamily,
    scheduler: Scheduler,
    lotplan: LotPlan,
    strategies=DEFAULT_STRATEGIES,
    noise_std: float = 0.1,
    seed: int | None = 0,
    dt: float = 0.5,
    keep_fields: bool = False,
    plant_scheduler: Scheduler | None = None,
) -> ScenarioTrace:
    """Simulate the lot timeline once, feeding every strategy the same plant and noise samples.

    The plant follows the scheduler's rules without dwell time; the
    proposed predictor follows ``scheduler`` itself.
    """
    strategies = tuple(strategies)
    unknown = set(strategies) - set(STRATEGIES)
    if unknown:
        raise ValueError(f"unknown strategies {sorted(unknown)}; choose from {STRATEGIES}")
    if len(set(strategies)) != len(strategies):
        raise ValueError("duplicate strategies")
    p_out = plant.C_z.shape[0]
    for r, mem in family.regime_table.items():
        if mem.C.shape[0] != p_out:
            raise ValueError(f"family member {r} predicts {mem.C.shape[0]} outputs, plant has {p_out}")
    if lotplan.layout.n_active == 0:
        raise ValueError("lot plan layout has no active marks")
    steps = build_timeline(lotplan, dt)
    plant_sched = plant_scheduler or Scheduler(scheduler.rules, dwell_min=0.0)

    rng = np.random.default_rng(seed)
    full_layout = lotplan.layout
    pred_layout = full_layout.with_groups(PREDICTOR_GROUPS & full_layout.active_groups, "top-bottom")
    pred_sampled = plant.sampled(pred_layout)
    pred_rows = pred_layout.active_index(full_layout)
    mark_pos = full_layout.positions()
    ex, ey = plant.eval_xy
    eval_pts = np.column_stack([ex, ey])
    n_eval = plant.n_eval
    inside = plant.image_area.contains(ex, ey)

    true_tracker = RegimeTracker(plant_sched)
    pred_tracker = RegimeTracker(scheduler)
    nominal = family.nominal

    states: dict[str, PredictorState] = {}
    for s in strategies:
        if s != "status_quo":
            states[s] = PredictorState.initial(nominal)
    sq_field = np.zeros(2 * n_eval)

    N = len(steps)
    step_rms = {s: np.zeros(N) for s in strategies}
    model_regime = {s: np.zeros(N, dtype=int) for s in strategies}
    xhat = {s: np.zeros((N, nominal.order)) for s in states}
    nominal_gap = np.full(N, np.nan)
    true_regime = np.zeros(N, dtype=int)
    mean_temp = np.zeros(N)
    events: list[tuple[float, str]] = []
    switches: list[dict] = []
    acc: dict[tuple[int, int, str], _WaferAccumulator] = {}
    z_store = np.zeros((N, 2 * n_eval)) if keep_fields else None
    zhat_store = {s: np.zeros((N, 2 * n_eval)) for s in strategies} if keep_fields else None

    x = np.zeros(plant.n)
    for k, st in enumerate(steps):
        for kind in st.events:
            ev = Event(st.t, kind, layout_id=full_layout.layout_id if kind == "measurement" else None)
            events.append((st.t, kind))
            true_tracker.observe(ev)
            pred_tracker.observe(ev)
        reg_true = true_tracker.regime_at(st.t)
        reg_pred = pred_tracker.regime_at(st.t)
        if reg_true not in plant.A_by_regime:
            raise ValueError(f"timeline reaches regime {reg_true} at t={st.t}, which the plant does not have")
        true_regime[k] = reg_true

        x = plant_step(plant, x, st.u_e, reg_true, dt)
        mean_temp[k] = float(x.mean())
        z, y_all = plant_outputs(plant, x, full_layout, noise_std, rng) if st.measure else (plant.C_z @ x, None)
        y_pred = None if y_all is None else y_all[pred_rows]

        fields: dict[str, np.ndarray] = {}
        for s in strategies:
            if s == "status_quo":
                if y_all is not None:
                    sq_field = _status_quo_field(mark_pos, y_all, eval_pts)
                fields[s] = sq_field
                model_regime[s][k] = -1
                continue
            ps = states[s]
            if s in ("proposed", "proposed_open_loop") and reg_pred != ps.regime:
                nxt = family.member(reg_pred)
                new = handoff(ps, nxt, t=st.t)
                switches.append(
                    {
                        "t": st.t,
                        "strategy": s,
                        "from": ps.regime,
                        "to": reg_pred,
                        "jump": handoff_jump(ps.model.C, ps.x, nxt.C, new.x),
                    }
                )
                ps = new
            meas = None if s == "proposed_open_loop" else y_pred
            ps, zh = predictor_step(ps, st.u_e, meas, pred_sampled if meas is not None else None, dt)
            states[s] = ps
            fields[s] = zh
            xhat[s][k] = ps.x
            model_regime[s][k] = ps.regime

        if "proposed" in fields and "linear_only" in fields:
            nominal_gap[k] = float(np.max(np.abs(fields["proposed"] - fields["linear_only"])))
        for s, zh in fields.items():
            e = zh - z
            ex_in, ey_in = e[:n_eval][inside], e[n_eval:][inside]
            step_rms[s][k] = math.sqrt((ex_in @ ex_in + ey_in @ ey_in) / (2 * max(ex_in.size, 1)))
            if st.phase == "expose":
                acc.setdefault((st.lot, st.wafer, s), _WaferAccumulator()).add(ex_in, ey_in)
            if keep_fields:
                zhat_store[s][k] = zh
        if keep_fields:
            z_store[k] = z

    return ScenarioTrace(
        strategies=strategies,
        dt=dt,
        t=np.array([s.t for s in steps]),
        u_e=np.array([s.u_e for s in steps]),
        true_regime=true_regime,
        lot=np.array([s.lot for s in steps]),
        wafer=np.array([s.wafer for s in steps]),
        phase=tuple(s.phase for s in steps),
        mean_temp=mean_temp,
        events=events,
        step_rms=step_rms,
        model_regime=model_regime,
        xhat=xhat,
        nominal_gap=nominal_gap,
        switches=switches,
        wafer_errors={key: a.summary() for key, a in sorted(acc.items())},
        seed=seed,
        z=z_store,
        zhat=zhat_store,
    )


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class WaferMetric:
    lot: int
    wafer: int
    strategy: str
    axis: str
    max_nm: float
    rms_nm: float


@dataclass
class MetricsTable:
    rows: list[WaferMetric]
    ratios: dict[str, dict[tuple[int, int], float]]  # strategy -> (lot, wafer) -> rms_xy / status_quo rms_xy
    first_wafers: dict[str, dict[int, float]]  # strategy -> lot -> mean rms_xy of the first wafers
    throughput: list[dict] = field(default_factory=list)

    def rms(self, strategy: str, axis: str = "xy") -> dict[tuple[int, int], float]:
        return {(r.lot, r.wafer): r.rms_nm for r in self.rows if r.strategy == strategy and r.axis == axis}

    def ratio_between(self, num: str, den: str, axis: str = "xy") -> dict[tuple[int, int], float]:
        a, b = self.rms(num, axis), self.rms(den, axis)
        return {k: _safe_ratio(a[k], b[k]) for k in a if k in b}


def _safe_ratio(a: float, b: float) -> float:
    if b == 0.0:
        return 1.0 if a == 0.0 else math.inf
    return a / b


def compare_strategies(trace: ScenarioTrace, reference: str = "status_quo", n_first: int = 2) -> MetricsTable:
    strategies = trace.strategies
    if len(strategies) < 2:
        raise ValueError("comparison needs at least two strategies")
    rows = []
    for (lot, wafer, s), summ in sorted(trace.wafer_errors.items()):
        for axis in AXES:
            mx, rms = summ[axis]
            rows.append(WaferMetric(lot, wafer, s, axis, mx, rms))
    table = MetricsTable(rows, {}, {})
    ref = reference if reference in strategies else strategies[0]
    for s in strategies:
        table.ratios[s] = table.ratio_between(s, ref)
        per_lot: dict[int, list[float]] = {}
        for (lot, wafer), v in sorted(table.rms(s).items()):
            if wafer < n_first:
                per_lot.setdefault(lot, []).append(v)
        table.first_wafers[s] = {lot: float(np.mean(v)) for lot, v in per_lot.items()}
    return table


@dataclass(frozen=True)
class ThroughputFigures:
    variant: str
    cycle_s: float
    wph: float
    gain_wph: float
    wph_with_lot_swap: float


def throughput_report(lotplan: LotPlan, skip_edge_marks: bool) -> ThroughputFigures:
    """Steady-state wafers per hour; ``gain`` is relative to measuring the edge marks."""
    base = lotplan.wafer_expose_time + lotplan.wafer_swap_time
    full_cycle = base + lotplan.edge_mark_time
    cycle = base if skip_edge_marks else full_cycle
    if not cycle > 0 or not full_cycle > 0:
        raise ValueError("cycle time must be positive")
    wph = 3600.0 / cycle
    gain = wph - 3600.0 / full_cycle
    W = lotplan.wafers_per_lot
    wph_lot = 3600.0 * W / (W * cycle + lotplan.lot_swap_time)
    return ThroughputFigures("skip_edge_marks" if skip_edge_marks else "measure_edge_marks", cycle, wph, gain, wph_lot)


# --------------------------------------------------------------------------
# output files

PER_WAFER_HEADER = ("lot", "wafer", "strategy", "axis", "max_nm", "rms_nm")
TRACE_HEADER = ("t_s", "regime", "strategy", "rms_nm")
THROUGHPUT_HEADER = ("variant", "cycle_s", "wph", "gain_wph")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def render_results(trace: ScenarioTrace, metrics: MetricsTable | None, summary: dict | None = None) -> dict[str, str]:
    """File name -> content; pure and deterministic."""
    per_wafer = []
    if metrics is not None:
        per_wafer = [(r.lot, r.wafer, r.strategy, r.axis, r.max_nm, r.rms_nm) for r in metrics.rows]
    trace_rows = []
    for k in range(trace.n_steps):
        for s in trace.strategies:
            reg = int(trace.model_regime[s][k]) if s != "status_quo" else int(trace.true_regime[k])
            trace_rows.append((float(trace.t[k]), reg, s, float(trace.step_rms[s][k])))
    tp_rows = []
    if metrics is not None:
        tp_rows = [(d["variant"], d["cycle_s"], d["wph"], d["gain_wph"]) for d in metrics.throughput]
    doc = dict(summary or {})
    if metrics is not None:
        doc.setdefault(
            "first_wafers_rms_nm",
            {s: {str(l): v for l, v in d.items()} for s, d in metrics.first_wafers.items()},
        )
    doc.setdefault("n_steps", trace.n_steps)
    doc.setdefault("switches", [dict(sw) for sw in trace.switches])
    return {
        "per_wafer.csv": _csv_text(PER_WAFER_HEADER, per_wafer),
        "trace.csv": _csv_text(TRACE_HEADER, trace_rows),
        "throughput.csv": _csv_text(THROUGHPUT_HEADER, tp_rows),
        "summary.json": json.dumps(doc, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n",
    }


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def emit_results(trace: ScenarioTrace, metrics: MetricsTable | None, out_dir, summary: dict | None = None) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in render_results(trace, metrics, summary).items():
            path = out_dir / name
            path.write_text(text)
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write results to {out_dir}: {exc}") from exc
    return written


def read_per_wafer(path) -> list[WaferMetric]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [
            WaferMetric(int(d["lot"]), int(d["wafer"]), d["strategy"], d["axis"], float(d["max_nm"]), float(d["rms_nm"]))
            for d in r
        ]

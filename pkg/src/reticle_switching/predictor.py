"""History-driven model switching with sparse-measurement state correction.

The scheduler replays an event log into a handful of boolean flags and maps
them to a regime through an ordered rule table. The predictor propagates the
active reduced model and, when a measurement arrives, applies a discrete
correction through the feedback gain ``L`` stored as the model's ``B_f``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .layout import SampledLayout
from .reduction import ModelFamily, ReducedModel
from .systems import spectral_abscissa

EVENT_KINDS = frozenset(
    {
        "exposure_on",
        "exposure_off",
        "clamp",
        "unclamp",
        "pellicle_on",
        "pellicle_off",
        "measurement",
        "lot_start",
        "lot_end",
    }
)

# flags a rule may test; exposure state is deliberately absent so the
# regime never follows the exposure signal itself
RULE_FLAGS = frozenset({"clamped", "reclamped", "pellicle", "in_lot"})


@dataclass(frozen=True)
class Event:
    t: float
    kind: str
    payload: object = None
    layout_id: str | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if not math.isfinite(self.t):
            raise ValueError("event time must be finite")
        if self.kind == "measurement" and self.layout_id is None:
            raise ValueError("measurement events must carry a layout id")


@dataclass(frozen=True)
class HistoryLog:
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        ts = [e.t for e in self.events]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("history timestamps must be non-decreasing")

    def append(self, event: Event) -> "HistoryLog":
        if self.events and event.t < self.events[-1].t:
            raise ValueError("history timestamps must be non-decreasing")
        return HistoryLog(self.events + (event,))

    def __len__(self) -> int:
        return len(self.events)

    @property
    def t_last(self) -> float:
        return self.events[-1].t if self.events else 0.0


@dataclass(frozen=True)
class Rule:
    when: Mapping[str, bool]
    regime: int

    def __post_init__(self):
        unknown = set(self.when) - RULE_FLAGS
        if unknown:
            raise ValueError(f"rule tests unknown flags {sorted(unknown)}; allowed {sorted(RULE_FLAGS)}")
        object.__setattr__(self, "when", dict(self.when))

    def matches(self, flags: Mapping[str, bool]) -> bool:
        return all(flags[k] == v for k, v in self.when.items())


DEFAULT_RULES = (
    Rule({"clamped": False}, 1),
    Rule({"reclamped": True}, 2),
)
PELLICLE_RULE = Rule({"pellicle": True}, 3)


@dataclass(frozen=True)
class Scheduler:
    """Ordered rules; first match wins, no match means regime 0."""

    rules: tuple[Rule, ...] = DEFAULT_RULES
    dwell_min: float = 1.0
    family: ModelFamily | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.dwell_min < 0:
            raise ValueError("dwell_min must be >= 0")
        if self.family is not None:
            known = set(self.family.regimes)
            missing = sorted({r.regime for r in self.rules} - known)
            if missing:
                raise ValueError(f"rules map to regimes {missing} absent from the model family")

    @classmethod
    def from_config(cls, rules: Iterable[Mapping], dwell_min: float = 1.0, family=None) -> "Scheduler":
        parsed = []
        for i, item in enumerate(rules):
            extra = set(item) - {"when", "regime"}
            if extra or "regime" not in item:
                raise ValueError(f"scheduler rule {i}: expected keys 'when' and 'regime', got {sorted(item)}")
            parsed.append(Rule(dict(item.get("when", {})), int(item["regime"])))
        return cls(tuple(parsed), dwell_min, family)

    def to_config(self) -> list[dict]:
        return [{"when": dict(r.when), "regime": r.regime} for r in self.rules]

    def regime_for(self, flags: Mapping[str, bool]) -> int:
        for rule in self.rules:
            if rule.matches(flags):
                return rule.regime
        return 0


@dataclass
class RegimeTracker:
    """Incremental replay of a history through a scheduler, dwell time included."""

    scheduler: Scheduler
    flags: dict = field(
        default_factory=lambda: {"clamped": True, "reclamped": False, "pellicle": False, "in_lot": False}
    )
    current: int = 0
    desired: int = 0
    t_desired: float = 0.0
    last_switch_t: float = -math.inf
    switch_times: list = field(default_factory=list)

    def _advance(self, t: float) -> None:
        if self.desired == self.current:
            return
        t_eff = max(self.t_desired, self.last_switch_t + self.scheduler.dwell_min)
        if t >= t_eff:
            self.current = self.desired
            self.last_switch_t = t_eff
            self.switch_times.append(t_eff)

    def observe(self, event: Event) -> None:
        self._advance(event.t)
        f = self.flags
        kind = event.kind
        if kind == "clamp":
            if not f["clamped"]:
                f["reclamped"] = True
            f["clamped"] = True
        elif kind == "unclamp":
            f["clamped"] = False
        elif kind == "pellicle_on":
            f["pellicle"] = True
        elif kind == "pellicle_off":
            f["pellicle"] = False
        elif kind == "lot_start":
            f["in_lot"] = True
        elif kind == "lot_end":
            f["in_lot"] = False
        new = self.scheduler.regime_for(f)
        if new != self.desired:
            self.desired = new
            self.t_desired = event.t
        self._advance(event.t)

    def regime_at(self, t: float) -> int:
        self._advance(t)
        return self.current


def classify_regime(scheduler: Scheduler, history: HistoryLog, t: float | None = None) -> int:
    """Regime selected by ``scheduler`` for ``history`` at time ``t`` (default: last event)."""
    tracker = RegimeTracker(scheduler)
    for ev in history.events:
        tracker.observe(ev)
    return tracker.regime_at(history.t_last if t is None else t)


# --------------------------------------------------------------------------
# measurement map and sparse-to-dense reconstruction


def _require_marks(layout: SampledLayout) -> None:
    if layout.n_active == 0:
        raise ValueError("feedback requested with empty layout")


def gamma_pinv(M: np.ndarray, lam: float) -> np.ndarray:
    """``(M^T M + lam I)^-1 M^T``."""
    r = M.shape[1]
    return np.linalg.solve(M.T @ M + lam * np.eye(r), M.T)


def gamma_map(layout: SampledLayout, y: np.ndarray, model: ReducedModel, lam: float = 1e-6) -> np.ndarray:
    """Dense field ``C x*`` with ``x* = argmin |S C x - y|^2 + lam |x|^2``."""
    _require_marks(layout)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != 2 * layout.n_active:
        raise ValueError(f"y has length {y.shape[0]}, expected {2 * layout.n_active}")
    M = layout.S @ model.C
    return model.C @ (gamma_pinv(M, lam) @ y)


class DetectabilityError(ValueError):
    pass


def design_feedback_gain(
    model: ReducedModel, layout: SampledLayout, rho: float, lam: float = 1e-6, obs_tol: float = 1e-9
) -> np.ndarray:
    """Gain ``L = kappa * Gamma_x`` with the smallest ``kappa`` meeting the decay target.

    ``Gamma_x`` is the regularized pseudo-inverse of ``S C``; ``kappa`` is
    found by doubling then bisection so that the spectral abscissa of
    ``A - L S C`` is at most ``rho`` times that of ``A``.
    """
    _require_marks(layout)
    if not rho > 1:
        raise ValueError("rho must exceed 1")
    A = model.A
    a0 = spectral_abscissa(A)
    if not a0 < 0:
        raise ValueError("model must be stable")
    target = rho * a0
    M = layout.S @ model.C

    # PBH test on the modes that must move
    ev, W = np.linalg.eig(A)
    scale = max(np.linalg.norm(M, 2), 1e-300)
    stuck = [
        lam_i
        for lam_i, w in zip(ev, W.T)
        if lam_i.real > target and np.linalg.norm(M @ w) <= obs_tol * scale * np.linalg.norm(w)
    ]
    if stuck:
        listing = ", ".join(f"{z.real:.4g}{z.imag:+.4g}j" for z in stuck)
        raise DetectabilityError(f"unobservable modes from layout {layout.layout_id!r}: {listing}")

    G = gamma_pinv(M, lam)
    GM = G @ M
    ok = lambda kap: spectral_abscissa(A - kap * GM) <= target
    hi = abs(a0)
    for _ in range(80):
        if ok(hi):
            break
        hi *= 2.0
    else:
        raise DetectabilityError(f"no gain reaches the decay target rho={rho} for layout {layout.layout_id!r}")
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi * G


def attach_gain(model: ReducedModel, L: np.ndarray) -> ReducedModel:
    return model.with_ssm(model.ssm.with_feedback(L))


# --------------------------------------------------------------------------
# predictor


@dataclass(frozen=True, eq=False)
class PredictorState:
    model: ReducedModel
    x: np.ndarray
    t: float = 0.0
    last_switch_t: float = -math.inf

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        if x.shape[0] != self.model.order:
            raise ValueError(f"state length {x.shape[0]} does not match model order {self.model.order}")
        if not np.all(np.isfinite(x)):
            raise ValueError("predictor state is not finite")
        object.__setattr__(self, "x", x)

    @property
    def regime(self) -> int:
        return self.model.regime

    def output(self) -> np.ndarray:
        return self.model.C @ self.x

    @classmethod
    def initial(cls, model: ReducedModel, t: float = 0.0) -> "PredictorState":
        return cls(model, np.zeros(model.order), t)


def predictor_step(
    ps: PredictorState,
    u_e: float,
    y_opt: np.ndarray | None,
    layout: SampledLayout | None,
    dt: float,
) -> tuple[PredictorState, np.ndarray]:
    """Implicit-Euler prediction, then ``x += dt * L (y - S C x)`` if ``y_opt`` is given."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not math.isfinite(float(u_e)):
        raise ValueError("u_e is not finite")
    m = ps.model
    r = m.order
    rhs = ps.x + dt * m.B_e[:, 0] * float(u_e)
    x = np.linalg.solve(np.eye(r) - dt * m.A, rhs)
    if y_opt is not None:
        if layout is None:
            raise ValueError("a measurement needs its layout")
        _require_marks(layout)
        y = np.asarray(y_opt, dtype=float).ravel()
        if not np.all(np.isfinite(y)):
            raise ValueError("measurement is not finite")
        if m.B_f is None:
            raise ValueError(f"model of regime {m.regime} has no feedback gain")
        x = x + dt * (m.B_f @ (y - layout.S @ (m.C @ x)))
    new = replace(ps, x=x, t=ps.t + dt)
    return new, m.C @ x


def handoff(ps: PredictorState, next_model: ReducedModel, lam_rel: float = 1e-14, t: float | None = None) -> PredictorState:
    """Output-matching state transfer ``argmin |C1 x - C0 x_hat|^2 + lam |x|^2``."""
    t_sw = ps.t if t is None else t
    if next_model is ps.model:
        return replace(ps, last_switch_t=t_sw)
    if next_model.ssm.n_outputs != ps.model.ssm.n_outputs:
        raise ValueError("models must share the output dimension")
    C1 = next_model.C
    target = ps.model.C @ ps.x
    if not np.any(target):
        return PredictorState(next_model, np.zeros(next_model.order), ps.t, t_sw)
    smax = np.linalg.norm(C1, 2)
    lam = lam_rel * smax * smax
    aug = np.vstack([C1, math.sqrt(lam) * np.eye(C1.shape[1])])
    rhs = np.concatenate([target, np.zeros(C1.shape[1])])
    x, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return PredictorState(next_model, x, ps.t, t_sw)


def handoff_jump(C_prev: np.ndarray, x_prev: np.ndarray, C_next: np.ndarray, x_next: np.ndarray) -> float:
    """Norm of the output jump projected onto ``range(C_next)``.

    The intersection of both ranges lies inside ``range(C_next)``, so this
    bounds the jump restricted to the shared output range from above.
    """
    d = C_next @ x_next - C_prev @ x_prev
    Q, _ = np.linalg.qr(C_next)
    return float(np.linalg.norm(Q.T @ d))

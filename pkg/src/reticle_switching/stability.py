"""Small-gain certification of the switching predictor loop.

Signals of the generalized plant:

* ``u_e`` exposure input (exogenous)
* ``u_f`` measurement innovation fed back into the predictor; the loop is
  closed as ``u_f = y``
* ``u_i`` output of the pulled-out model-set uncertainty, added to the
  nominal predicted field
* ``y`` measurement residual at the marks, ``z`` dense prediction error

State ordering is ``[plant; nominal predictor]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .kernels import propagate
from .norms import hinf_details
from .reduction import ModelFamily, ReducedModel
from .systems import StateSpaceModel, parallel_difference, spectral_abscissa


class AssumptionViolated(RuntimeError):
    """The nominal interconnection is not stable, so no certificate can be issued."""


class UnstableDelta(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GeneralizedPlant:
    A: np.ndarray
    B_e: np.ndarray
    B_f: np.ndarray
    B_i: np.ndarray
    C_y: np.ndarray
    C_z: np.ndarray
    D_fy: np.ndarray
    D_iy: np.ndarray
    D_fz: np.ndarray
    D_iz: np.ndarray
    n_plant: int = 0

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("A contains non-finite entries")
        q = self.C_y.shape[0]
        p = self.C_z.shape[0]
        m_f = self.B_f.shape[1]
        m_i = self.B_i.shape[1]
        expected = {
            "B_e": (n, self.B_e.shape[1]),
            "B_f": (n, m_f),
            "B_i": (n, m_i),
            "C_y": (q, n),
            "C_z": (p, n),
            "D_fy": (q, m_f),
            "D_iy": (q, m_i),
            "D_fz": (p, m_f),
            "D_iz": (p, m_i),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"block {name} has shape {getattr(self, name).shape}, expected {shape}")
        if m_f != q:
            raise ValueError(f"feedback channel width {m_f} differs from measurement width {q}")

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class UncertaintyRealization:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    bound: float
    regime: int | None = None

    def __post_init__(self):
        if self.A.size and spectral_abscissa(self.A) >= 0:
            raise UnstableDelta("uncertainty realization is not stable")
        if self.bound < 0:
            raise ValueError("delta bound must be >= 0")

    def as_model(self) -> StateSpaceModel:
        return StateSpaceModel(A=self.A, B_e=self.B, C=self.C, D=self.D)

    def peak_gain(self) -> float:
        return hinf_details(self.as_model()).gamma

    def inflated(self, factor: float) -> "UncertaintyRealization":
        """Same dynamics scaled by ``factor`` (bound scaled accordingly)."""
        return UncertaintyRealization(
            self.A, self.B, factor * self.C, factor * self.D, factor * self.bound, self.regime
        )


@dataclass(frozen=True)
class StabilityCertificate:
    gamma: float
    delta_bound: float
    margin: float
    passed: bool
    omega_min: float
    omega_max: float
    omega_peak: float
    n_grid: int
    tol: float
    sufficient_only: bool = True

    @property
    def pass_(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = str(v)
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _feedback_gain(model: ReducedModel) -> np.ndarray:
    if model.B_f is None:
        raise ValueError(f"predictor model of regime {model.regime} has no feedback gain B_f")
    return model.B_f


def assemble_lft(plant_model: StateSpaceModel, family: ModelFamily, S: np.ndarray) -> GeneralizedPlant:
    """Generalized plant of plant, nominal predictor with feedback, and the ``u_i`` channel.

    ``S`` maps the dense field to the measured marks.
    """
    nominal = family.nominal
    L = _feedback_gain(nominal)
    S = np.asarray(S, dtype=float)
    p = plant_model.n_outputs
    if nominal.C.shape[0] != p:
        raise ValueError(f"block C_z: plant has {p} outputs, predictor has {nominal.C.shape[0]}")
    if S.shape[1] != p:
        raise ValueError(f"block C_y: sampling matrix has {S.shape[1]} columns, field has {p} entries")
    q = S.shape[0]
    if L.shape[1] != q:
        raise ValueError(f"block B_f: gain has {L.shape[1]} columns, layout measures {q} values")
    if plant_model.B_e.shape[1] != nominal.B_e.shape[1]:
        raise ValueError("block B_e: exposure input widths differ")
    n_p, n_n = plant_model.n_states, nominal.order
    A = sla.block_diag(plant_model.A, nominal.A)
    return GeneralizedPlant(
        A=A,
        B_e=np.vstack([plant_model.B_e, nominal.B_e]),
        B_f=np.vstack([np.zeros((n_p, q)), L]),
        B_i=np.zeros((n_p + n_n, p)),
        C_y=np.hstack([S @ plant_model.C, -S @ nominal.C]),
        C_z=np.hstack([plant_model.C, -nominal.C]),
        D_fy=np.zeros((q, q)),
        D_iy=-S,
        D_fz=np.zeros((p, q)),
        D_iz=-np.eye(p),
        n_plant=n_p,
    )


def nominal_closed_loop(gp: GeneralizedPlant) -> StateSpaceModel:
    """``u_f = y`` closed, ``u_i = 0``; input ``u_e``, outputs ``[z; y]``."""
    return close_lft(gp, None)


def close_lft(gp: GeneralizedPlant, delta: UncertaintyRealization | None, delta_sees_exposure: bool = False) -> StateSpaceModel:
    """Close ``u_f = y`` and ``u_i = Delta(v)``.

    ``v`` is ``u_f``, or ``[u_e; u_f]`` when ``delta_sees_exposure``.
    Returns the closed loop from ``u_e`` to ``[z; y]``.
    """
    n, q, p_i = gp.n, gp.C_y.shape[0], gp.B_i.shape[1]
    m_e = gp.B_e.shape[1]
    if delta is None:
        nd = 0
        A_d = np.zeros((0, 0))
        B_de = np.zeros((0, m_e))
        B_df = np.zeros((0, q))
        C_d = np.zeros((p_i, 0))
        D_de = np.zeros((p_i, m_e))
        D_df = np.zeros((p_i, q))
    else:
        nd = delta.A.shape[0]
        width = (m_e + q) if delta_sees_exposure else q
        if delta.B.shape[1] != width or delta.C.shape[0] != p_i:
            raise ValueError(
                f"uncertainty maps {delta.B.shape[1]} -> {delta.C.shape[0]}, loop needs {width} -> {p_i}"
            )
        A_d, C_d = delta.A, delta.C
        if delta_sees_exposure:
            B_de, B_df = delta.B[:, :m_e], delta.B[:, m_e:]
            D_de, D_df = delta.D[:, :m_e], delta.D[:, m_e:]
        else:
            B_de, B_df = np.zeros((nd, m_e)), delta.B
            D_de, D_df = np.zeros((p_i, m_e)), delta.D

    # eliminate u_i, then solve the q x q loop equation for u_f
    Kf = np.eye(q) - gp.D_fy - gp.D_iy @ D_df
    try:
        Fx = np.linalg.solve(Kf, np.hstack([gp.C_y, gp.D_iy @ C_d]))
        Fu = np.linalg.solve(Kf, gp.D_iy @ D_de)
    except np.linalg.LinAlgError as exc:
        raise ValueError("interconnection is ill-posed (singular algebraic loop)") from exc
    Ix = np.hstack([np.zeros((p_i, n)), C_d]) + D_df @ Fx
    Iu = D_de + D_df @ Fu
    Wx = np.vstack([Fx, Ix])
    Wu = np.vstack([Fu, Iu])

    A0 = sla.block_diag(gp.A, A_d)
    Bw = np.block([[gp.B_f, gp.B_i], [B_df, np.zeros((nd, p_i))]])
    B0 = np.vstack([gp.B_e, B_de])
    Acl = A0 + Bw @ Wx
    Bcl = B0 + Bw @ Wu
    Dzw = np.hstack([gp.D_fz, gp.D_iz])
    Cz0 = np.hstack([gp.C_z, np.zeros((gp.C_z.shape[0], nd))])
    Ccl = np.vstack([Cz0 + Dzw @ Wx, Wx[:q]])
    Dcl = np.vstack([Dzw @ Wu, Wu[:q]])
    return StateSpaceModel(A=Acl, B_e=Bcl, C=Ccl, D=Dcl)


def monolithic_closed_loop(plant_model: StateSpaceModel, member: ReducedModel, S: np.ndarray) -> StateSpaceModel:
    """Plant and predictor member wired directly (no LFT), outputs ``[z; y]``."""
    L = _feedback_gain(member)
    S = np.asarray(S, dtype=float)
    SCp, SCm = S @ plant_model.C, S @ member.C
    A = np.block([[plant_model.A, np.zeros((plant_model.n_states, member.order))], [L @ SCp, member.A - L @ SCm]])
    B = np.vstack([plant_model.B_e, member.B_e])
    C = np.vstack([np.hstack([plant_model.C, -member.C]), np.hstack([SCp, -SCm])])
    return StateSpaceModel(A=A, B_e=B, C=C)


def member_uncertainty(family: ModelFamily, regime: int, include_exposure: bool = False) -> UncertaintyRealization:
    """Unnormalized difference ``M_i - M_n`` on the feedback channel (or on ``[u_e; u_f]``)."""
    member = family.member(regime)
    nominal = family.nominal
    if include_exposure:
        diff = parallel_difference(member.ssm, nominal.ssm)
        B, D = diff.B, diff.D
    else:
        a = StateSpaceModel(A=member.A, B_e=_feedback_gain(member), C=member.C)
        b = StateSpaceModel(A=nominal.A, B_e=_feedback_gain(nominal), C=nominal.C)
        diff = parallel_difference(a, b)
        B, D = diff.B_e, diff.D
    model = StateSpaceModel(A=diff.A, B_e=B, C=diff.C, D=D)
    bound = hinf_details(model).gamma if model.is_stable() else math.inf
    return UncertaintyRealization(diff.A, B, diff.C, D, bound, regime)


def family_uncertainty(family: ModelFamily) -> UncertaintyRealization:
    """Feedback-channel difference with the largest peak gain over the family."""
    worst = None
    for r in family.regimes:
        if r == family.nominal.regime:
            continue
        d = member_uncertainty(family, r)
        if worst is None or d.bound > worst.bound:
            worst = d
    if worst is None:
        q = _feedback_gain(family.nominal).shape[1]
        p = family.nominal.C.shape[0]
        return UncertaintyRealization(np.zeros((0, 0)), np.zeros((0, q)), np.zeros((p, 0)), np.zeros((p, q)), 0.0)
    return worst


def _structural_trim(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Indices of states both reachable from ``B`` and observable from ``C`` (sparsity pattern)."""
    nz = A != 0
    n = A.shape[0]

    def closure(seed: np.ndarray, adj: np.ndarray) -> np.ndarray:
        mark = seed.copy()
        frontier = list(np.flatnonzero(seed))
        while frontier:
            j = frontier.pop()
            for i in np.flatnonzero(adj[:, j] & ~mark):
                mark[i] = True
                frontier.append(i)
        return mark

    reach = closure(np.any(B != 0, axis=1), nz)  # j -> i when A[i, j] != 0
    obs = closure(np.any(C != 0, axis=0), nz.T)
    return np.flatnonzero(reach & obs) if n else np.zeros(0, dtype=int)


def uncertainty_channel(gp: GeneralizedPlant) -> StateSpaceModel:
    """Transfer from ``u_i`` to ``u_f`` with the measurement loop closed."""
    q = gp.C_y.shape[0]
    K = np.linalg.inv(np.eye(q) - gp.D_fy)
    A = gp.A + gp.B_f @ K @ gp.C_y
    B = gp.B_i + gp.B_f @ K @ gp.D_iy
    C = K @ gp.C_y
    D = K @ gp.D_iy
    keep = _structural_trim(A, B, C)
    return StateSpaceModel(A=A[np.ix_(keep, keep)], B_e=B[keep], C=C[:, keep], D=D)


def certify_guas(gp: GeneralizedPlant, delta: UncertaintyRealization, tol: float = 1e-4) -> StabilityCertificate:
    """Small-gain certificate: passes iff ``gamma * delta_bound < 1`` (sufficient only)."""
    nominal = nominal_closed_loop(gp)
    a = nominal.spectral_abscissa()
    if not a < 0:
        raise AssumptionViolated(f"nominal interconnection is not stable (spectral abscissa {a:.4g})")
    if delta.A.size and spectral_abscissa(delta.A) >= 0:
        raise UnstableDelta("uncertainty realization is not stable")
    measured = delta.peak_gain() if delta.A.size or np.any(delta.D) else 0.0
    if measured > delta.bound * (1 + 1e-6) + 1e-6:
        raise ValueError(f"uncertainty peak gain {measured:.6g} exceeds declared bound {delta.bound:.6g}")
    res = hinf_details(uncertainty_channel(gp), tol)
    margin = 1.0 - res.gamma * delta.bound
    return StabilityCertificate(
        gamma=res.gamma,
        delta_bound=float(delta.bound),
        margin=margin,
        passed=bool(margin > 0),
        omega_min=res.omega_min,
        omega_max=res.omega_max,
        omega_peak=res.omega_peak,
        n_grid=res.n_grid,
        tol=tol,
    )


@dataclass(frozen=True)
class BoundEstimate:
    bound: float  # sup of |z| after the input is removed
    peak: float  # sup of |z| over the whole run
    final: float
    decaying: bool


def simulate_closed_loop(closed_loop: StateSpaceModel, U: np.ndarray, dt: float) -> np.ndarray:
    """Output trajectory (steps x outputs) under implicit Euler, zero initial state."""
    M, N = closed_loop.discretize(dt)
    X = propagate(M, N, np.zeros(closed_loop.n_states), U)
    return X[1:] @ closed_loop.C.T + U @ closed_loop.D.T


def empirical_ultimate_bound(
    closed_loop: StateSpaceModel,
    excitation: float = 1.0,
    horizon: int = 600,
    dt: float = 5.0,
    on_fraction: float = 0.25,
    seed: int | np.random.Generator | None = 0,
    z_rows: slice | None = None,
    n_windows: int = 10,
    decay_ratio: float = 1e-2,
) -> BoundEstimate:
    """Drive with a random bounded input, then remove it and watch ``|z|``.

    The run counts as decaying when the per-window maxima of ``|z|`` after
    input removal never increase and the last window is below
    ``decay_ratio`` times the first.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = closed_loop.n_inputs
    n_on = max(1, int(round(on_fraction * horizon)))
    U = np.zeros((horizon, m))
    U[:n_on] = rng.uniform(0.0, excitation, size=(n_on, m))
    Z = simulate_closed_loop(closed_loop, U, dt)
    if z_rows is not None:
        Z = Z[:, z_rows]
    mag = np.linalg.norm(Z, axis=1)
    if not np.all(np.isfinite(mag)):
        return BoundEstimate(math.inf, math.inf, math.inf, False)
    tail = mag[n_on:]
    peak = float(mag.max()) if mag.size else 0.0
    if tail.size == 0 or peak == 0.0:
        return BoundEstimate(0.0, peak, 0.0, True)
    windows = np.array_split(tail, min(n_windows, tail.size))
    wmax = np.array([w.max() for w in windows])
    monotone = bool(np.all(np.diff(wmax) <= 1e-12 * wmax[0]))
    decaying = monotone and wmax[-1] <= decay_ratio * wmax[0]
    return BoundEstimate(float(tail.max()), peak, float(tail[-1]), bool(decaying))

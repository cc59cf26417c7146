"""Krylov moment-matching reduction and centering of a regime model family.

Moment convention: ``m_j`` is the ``j``-th Taylor coefficient of
``H(s0 + sigma)`` in ``sigma``, i.e. ``m_j = (-1)^j C K^(j+1) B_e`` with
``K = (s0 I - A)^-1`` (plus ``D`` in ``m_0``). For ``1/(s+1)`` at ``s0 = 0``
this gives ``(1, -1, 1, ...)``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import io
from .norms import hinf_norm
from .systems import StateSpaceModel, parallel_difference

logger = logging.getLogger(__name__)


class ReductionWarning(UserWarning):
    pass


def _factor_shift(A: np.ndarray, s0: float):
    n = A.shape[0]
    M = s0 * np.eye(n) - A
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu = sla.lu_factor(M)
        except (sla.LinAlgWarning, np.linalg.LinAlgError, ValueError) as exc:
            raise ValueError(f"expansion point hits spectrum (s0={s0})") from exc
    diag = np.abs(np.diag(lu[0]))
    if diag.size and diag.min() <= 1e-14 * max(diag.max(), 1.0):
        raise ValueError(f"expansion point hits spectrum (s0={s0})")
    return lu


def compute_moments(model: StateSpaceModel, s0: float = 0.0, k: int = 3) -> list[np.ndarray]:
    """Brute-force moments of the exposure channel about ``s0`` (dense LU)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    lu = _factor_shift(model.A, float(s0))
    v = model.B_e
    out = []
    for j in range(k):
        v = sla.lu_solve(lu, v)
        m = (-1) ** j * (model.C @ v)
        if j == 0:
            m = m + model.D[:, : model.B_e.shape[1]]
        out.append(m)
    return out


@dataclass(frozen=True, eq=False)
class ReducedModel:
    ssm: StateSpaceModel
    regime: int
    V: np.ndarray
    s0: float = 0.0
    k_moments: int = 3
    stabilized: bool = False

    @property
    def A(self) -> np.ndarray:
        return self.ssm.A

    @property
    def B_e(self) -> np.ndarray:
        return self.ssm.B_e

    @property
    def B_f(self):
        return self.ssm.B_f

    @property
    def C(self) -> np.ndarray:
        return self.ssm.C

    @property
    def order(self) -> int:
        return self.ssm.n_states

    def with_ssm(self, ssm: StateSpaceModel) -> "ReducedModel":
        return ReducedModel(ssm, self.regime, self.V, self.s0, self.k_moments, self.stabilized)


def _reflect_unstable(A: np.ndarray) -> np.ndarray:
    ev, W = np.linalg.eig(A)
    ev = np.where(ev.real >= 0, -np.abs(ev.real) - 1e-12 + 1j * ev.imag, ev)
    return np.real(W @ np.diag(ev) @ np.linalg.inv(W))


def krylov_reduce(
    model: StateSpaceModel,
    s0: float = 0.0,
    k: int = 3,
    start: np.ndarray | None = None,
    regime: int = 0,
    rank_tol: float = 1e-10,
) -> ReducedModel:
    """One-sided Arnoldi projection onto ``span{K b, K^2 b, ..., K^k b}``.

    ``start`` replaces ``B_e`` as the Krylov seed; used for regimes whose
    exposure input is zero so they still get an informative basis.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not model.is_stable():
        raise ValueError("krylov_reduce requires a stable model")
    s0 = float(s0)
    lu = _factor_shift(model.A, s0)
    b = model.B_e[:, 0] if start is None else np.asarray(start, dtype=float).ravel()
    if b.shape[0] != model.n_states:
        raise ValueError("start vector has the wrong length")
    if not np.any(b):
        raise ValueError("Krylov seed is zero; pass a nonzero start vector")

    n = model.n_states
    cols: list[np.ndarray] = []
    v = b
    scale = None
    for j in range(min(k, n)):
        v = sla.lu_solve(lu, v if j == 0 else cols[-1])
        w = v.copy()
        for _ in range(2):  # modified Gram-Schmidt, repeated once for stability
            for q in cols:
                w -= (q @ w) * q
        nrm = np.linalg.norm(w)
        if scale is None:
            scale = nrm
        if nrm <= rank_tol * scale:
            warnings.warn(
                f"Krylov space of regime {regime} is rank deficient; order {len(cols)} instead of {k}",
                ReductionWarning,
                stacklevel=2,
            )
            break
        cols.append(w / nrm)
    V = np.column_stack(cols)

    Ar = V.T @ model.A @ V
    stabilized = False
    if np.max(np.linalg.eigvals(Ar).real) >= 0:
        warnings.warn(
            f"projection destabilized regime {regime}; unstable eigenvalues reflected",
            ReductionWarning,
            stacklevel=2,
        )
        Ar = _reflect_unstable(Ar)
        stabilized = True
    ssm = StateSpaceModel(
        A=Ar,
        B_e=V.T @ model.B_e,
        C=model.C @ V,
        B_f=None if model.B_f is None else V.T @ model.B_f,
        D=model.D,
        input_labels=model.input_labels,
        output_labels=model.output_labels,
    )
    return ReducedModel(ssm, regime, V, s0, k, stabilized)


def moment_report(
    full: StateSpaceModel, reduced: ReducedModel, seed: np.ndarray | None = None, eps: float = 1e-300
) -> dict:
    """Relative moment errors of ``reduced`` against the dense oracle.

    Errors are max-abs over the output vector, relative to the full moment's
    max-abs entry. With ``seed`` the moments are taken for input vector
    ``seed`` instead of ``B_e`` (meaningful for regimes with no exposure).
    """
    red = reduced.ssm
    if seed is not None:
        seed = np.asarray(seed, dtype=float).reshape(-1, 1)
        full = StateSpaceModel(A=full.A, B_e=seed, C=full.C)
        red = StateSpaceModel(A=red.A, B_e=reduced.V.T @ seed, C=red.C)
    mf = compute_moments(full, reduced.s0, reduced.k_moments)
    mr = compute_moments(red, reduced.s0, reduced.k_moments)
    errs = []
    for a, b in zip(mf, mr):
        denom = max(float(np.max(np.abs(a))), eps)
        errs.append(float(np.max(np.abs(a - b))) / denom if np.any(a) or np.any(b) else 0.0)
    return {
        "regime": reduced.regime,
        "order": reduced.order,
        "k": reduced.k_moments,
        "s0": reduced.s0,
        "relative_errors": errs,
        "max_relative_error": max(errs),
        "stabilized": reduced.stabilized,
    }


def _zero_system(p: int, m_e: int, m_f: int) -> StateSpaceModel:
    return StateSpaceModel(
        A=np.zeros((0, 0)),
        B_e=np.zeros((0, m_e)),
        C=np.zeros((p, 0)),
        B_f=None if m_f == 0 else np.zeros((0, m_f)),
    )


@dataclass(frozen=True, eq=False)
class DeltaEntry:
    regime: int
    realization: StateSpaceModel  # normalized, peak gain 1 (or the zero system)
    scaling: float


@dataclass(frozen=True, eq=False)
class ModelFamily:
    nominal: ReducedModel
    deltas: dict[int, DeltaEntry]
    regime_table: dict[int, ReducedModel]
    metadata: dict = field(default_factory=dict)

    @property
    def regimes(self) -> list[int]:
        return sorted(self.regime_table)

    @property
    def delta_bound(self) -> float:
        return max((d.scaling for d in self.deltas.values()), default=0.0)

    def member(self, regime: int) -> ReducedModel:
        try:
            return self.regime_table[regime]
        except KeyError:
            raise KeyError(f"regime {regime} not in model family {self.regimes}") from None

    def reconstruct_response(self, regime: int, omega: float) -> np.ndarray:
        """``M_n(jw) + scaling * Delta(jw)``."""
        H = self.nominal.ssm.freqresp(omega)
        d = self.deltas.get(regime)
        if d is not None and d.scaling > 0:
            H = H + d.scaling * d.realization.freqresp(omega)
        return H

    def with_members(self, members: dict[int, ReducedModel]) -> "ModelFamily":
        return center_models(members)


def center_models(members: dict[int, ReducedModel], zero_tol: float = 1e-12) -> ModelFamily:
    """Split members into the regime-0 nominal plus peak-gain normalized differences."""
    if 0 not in members:
        raise ValueError("regime 0 (nominal) must be present")
    nominal = members[0]
    p = nominal.ssm.n_outputs
    m_e = nominal.ssm.B_e.shape[1]
    m_f = 0 if nominal.ssm.B_f is None else nominal.ssm.B_f.shape[1]
    ref = hinf_norm(nominal.ssm)
    deltas: dict[int, DeltaEntry] = {}
    for r, mem in sorted(members.items()):
        if mem.ssm.n_outputs != p:
            raise ValueError(f"regime {r} has {mem.ssm.n_outputs} outputs, nominal has {p}")
        if r == 0:
            continue
        diff = parallel_difference(mem.ssm, nominal.ssm)
        if not diff.is_stable():
            raise ValueError(f"difference realization for regime {r} is unstable")
        scaling = hinf_norm(diff)
        if scaling <= zero_tol * max(ref, 1.0):
            deltas[r] = DeltaEntry(r, _zero_system(p, m_e, m_f), 0.0)
            continue
        norm = StateSpaceModel(
            A=diff.A, B_e=diff.B_e, C=diff.C / scaling, B_f=diff.B_f, D=diff.D / scaling
        )
        deltas[r] = DeltaEntry(r, norm, float(scaling))
    return ModelFamily(nominal, deltas, dict(members))


# --------------------------------------------------------------------------
# serialization


def save_family(family: ModelFamily, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {"nominal_regime": family.nominal.regime, "members": {}, "deltas": {}, "metadata": family.metadata}
    for r, mem in sorted(family.regime_table.items()):
        files = io.save_model(mem.ssm, directory, f"member{r}")
        io.write_matrix(directory / f"member{r}_V.txt", mem.V)
        files["V"] = f"member{r}_V.txt"
        header["members"][str(r)] = {
            "regime": r,
            "s0": mem.s0,
            "k": mem.k_moments,
            "stabilized": mem.stabilized,
            "files": files,
        }
    for r, d in sorted(family.deltas.items()):
        header["deltas"][str(r)] = {"scaling": d.scaling, "files": io.save_model(d.realization, directory, f"delta{r}")}
    io.write_json(directory / "family.json", header)
    return directory


def load_family(directory) -> ModelFamily:
    directory = Path(directory)
    path = directory / "family.json"
    if not path.exists():
        raise FileNotFoundError(f"model family header not found: {path}")
    header = json.loads(path.read_text())
    members = {}
    for key, info in header["members"].items():
        files = dict(info["files"])
        V = io.read_matrix(directory / files.pop("V"))
        ssm = io.load_model(directory, files)
        members[int(key)] = ReducedModel(ssm, int(info["regime"]), V, info["s0"], info["k"], info["stabilized"])
    deltas = {}
    for key, info in header["deltas"].items():
        deltas[int(key)] = DeltaEntry(int(key), io.load_model(directory, info["files"]), float(info["scaling"]))
    nominal = members[int(header["nominal_regime"])]
    return ModelFamily(nominal, deltas, members, header.get("metadata", {}))

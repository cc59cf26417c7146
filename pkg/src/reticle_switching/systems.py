"""Continuous-time state-space realizations and small helpers around them."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

__all__ = [
    "StateSpaceModel",
    "parallel_difference",
    "spectral_abscissa",
]


def spectral_abscissa(A: np.ndarray) -> float:
    """Largest real part of the eigenvalues of ``A`` (``-inf`` for 0x0)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return -np.inf
    return float(np.max(np.linalg.eigvals(A).real))


def _as_2d(M, column: bool = False) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    elif M.ndim == 1:
        M = M.reshape(-1, 1) if column else M.reshape(1, -1)
    return M


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """``x' = A x + B_e u_e + B_f u_f``, ``out = C x + D [u_e; u_f]``.

    ``B_f`` is the feedback injection channel and may be absent. ``D``
    defaults to zero.
    """

    A: np.ndarray
    B_e: np.ndarray
    C: np.ndarray
    B_f: np.ndarray | None = None
    D: np.ndarray | None = None
    input_labels: tuple[str, ...] = field(default=())
    output_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        A = _as_2d(self.A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B_e = _as_2d(self.B_e, column=True)
        if B_e.shape[0] != n:
            raise ValueError(f"B_e has {B_e.shape[0]} rows, expected {n}")
        C = _as_2d(self.C)
        if C.shape[1] != n:
            raise ValueError(f"C has {C.shape[1]} columns, expected {n}")
        B_f = None
        if self.B_f is not None:
            B_f = _as_2d(self.B_f, column=True)
            if B_f.shape[0] != n:
                raise ValueError(f"B_f has {B_f.shape[0]} rows, expected {n}")
        m = B_e.shape[1] + (0 if B_f is None else B_f.shape[1])
        D = np.zeros((C.shape[0], m)) if self.D is None else _as_2d(self.D)
        if D.shape != (C.shape[0], m):
            raise ValueError(f"D must be {(C.shape[0], m)}, got {D.shape}")
        for name, M in (("A", A), ("B_e", B_e), ("C", C), ("D", D)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B_e", B_e)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "B_f", B_f)
        object.__setattr__(self, "D", D)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def B(self) -> np.ndarray:
        """All input columns, exposure first."""
        if self.B_f is None:
            return self.B_e
        return np.hstack([self.B_e, self.B_f])

    def spectral_abscissa(self) -> float:
        return spectral_abscissa(self.A)

    def is_stable(self) -> bool:
        return self.spectral_abscissa() < 0.0

    def with_feedback(self, B_f: np.ndarray | None) -> "StateSpaceModel":
        m = self.B_e.shape[1] + (0 if B_f is None else np.atleast_2d(B_f).shape[1])
        D = np.zeros((self.n_outputs, m))
        D[:, : self.B_e.shape[1]] = self.D[:, : self.B_e.shape[1]]
        return replace(self, B_f=B_f, D=D)

    def exposure_only(self) -> "StateSpaceModel":
        return self.with_feedback(None)

    def freqresp(self, omega: float) -> np.ndarray:
        """Frequency response matrix at ``s = j*omega``."""
        n = self.n_states
        if n == 0:
            return self.D.astype(complex)
        X = np.linalg.solve(1j * omega * np.eye(n) - self.A, self.B)
        return self.C @ X + self.D

    def dcgain(self) -> np.ndarray:
        if self.n_states == 0:
            return self.D.copy()
        return -self.C @ np.linalg.solve(self.A, self.B) + self.D

    def discretize(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Implicit-Euler transition pair ``(M, N)`` with ``x+ = M x + N u``."""
        n = self.n_states
        lu = sla.lu_factor(np.eye(n) - dt * self.A)
        M = sla.lu_solve(lu, np.eye(n))
        return M, dt * M @ self.B


def parallel_difference(a: StateSpaceModel, b: StateSpaceModel) -> StateSpaceModel:
    """Realization of ``a - b`` driven by a shared input vector."""
    if a.n_outputs != b.n_outputs:
        raise ValueError(f"output dimensions differ: {a.n_outputs} vs {b.n_outputs}")
    if a.B_e.shape[1] != b.B_e.shape[1]:
        raise ValueError("exposure input dimensions differ")
    fa = 0 if a.B_f is None else a.B_f.shape[1]
    fb = 0 if b.B_f is None else b.B_f.shape[1]
    if fa != fb:
        raise ValueError(f"feedback input dimensions differ: {fa} vs {fb}")
    A = sla.block_diag(a.A, b.A)
    B_e = np.vstack([a.B_e, b.B_e])
    B_f = None if fa == 0 else np.vstack([a.B_f, b.B_f])
    C = np.hstack([a.C, -b.C])
    return StateSpaceModel(A=A, B_e=B_e, C=C, B_f=B_f, D=a.D - b.D)

"""Hot numeric kernels.

Every kernel has a numba implementation (``*_numba``) and a vectorised numpy
implementation (``*_numpy``). The public name dispatches to one of them
according to :data:`reticle_switching._accel.USE_NUMBA`. Both paths are kept
importable so tests and ``benchmarks/bench_kernels.py`` can compare them.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "displacement_matrix",
    "propagate",
    "sigma_max_sweep",
]


# --------------------------------------------------------------------------
# thermo-elastic displacement kernel


@njit(cache=True)
def displacement_matrix_numba(px, py, qx, qy, core, weight):
    n_p = px.shape[0]
    n_q = qx.shape[0]
    out = np.empty((2 * n_p, n_q))
    c2 = core * core
    for i in range(n_p):
        for j in range(n_q):
            dx = px[i] - qx[j]
            dy = py[i] - qy[j]
            g = weight / (dx * dx + dy * dy + c2)
            out[i, j] = dx * g
            out[n_p + i, j] = dy * g
    return out


def displacement_matrix_numpy(px, py, qx, qy, core, weight):
    dx = px[:, None] - qx[None, :]
    dy = py[:, None] - qy[None, :]
    g = weight / (dx * dx + dy * dy + core * core)
    return np.vstack([dx * g, dy * g])


def displacement_matrix(px, py, qx, qy, core: float, weight: float) -> np.ndarray:
    """In-plane displacement per unit nodal temperature.

    Row ``i`` holds the x-displacement at point ``(px[i], py[i])`` and row
    ``len(px) + i`` the y-displacement; column ``j`` is source node
    ``(qx[j], qy[j])``. The kernel is ``weight * d / (|d|^2 + core^2)`` with
    ``d = p - q``, i.e. the gradient of a core-smoothed logarithmic potential.
    """
    args = (
        np.ascontiguousarray(px, dtype=np.float64),
        np.ascontiguousarray(py, dtype=np.float64),
        np.ascontiguousarray(qx, dtype=np.float64),
        np.ascontiguousarray(qy, dtype=np.float64),
        float(core),
        float(weight),
    )
    if USE_NUMBA:
        return displacement_matrix_numba(*args)
    return displacement_matrix_numpy(*args)


# --------------------------------------------------------------------------
# frequency response peak singular value


@njit(cache=True)
def sigma_max_sweep_numba(A, B, C, D, omegas):
    n = A.shape[0]
    p = C.shape[0]
    m = B.shape[1]
    out = np.empty(omegas.shape[0])
    Ac = A.astype(np.complex128)
    Bc = B.astype(np.complex128)
    Cc = C.astype(np.complex128)
    Dc = D.astype(np.complex128)
    eye = np.eye(n, dtype=np.complex128)
    for k in range(omegas.shape[0]):
        if n > 0:
            M = 1j * omegas[k] * eye - Ac
            if p <= m:
                # solve the transposed system; p right-hand sides instead of m
                Y = np.linalg.solve(M.T, Cc.T)
                H = Y.T @ Bc + Dc
            else:
                X = np.linalg.solve(M, Bc)
                H = Cc @ X + Dc
        else:
            H = Dc.copy()
        if p <= m:
            G = H @ np.conj(H.T)
        else:
            G = np.conj(H.T) @ H
        ev = np.linalg.eigvalsh(G)
        top = ev[-1]
        out[k] = np.sqrt(top) if top > 0.0 else 0.0
    return out


def sigma_max_sweep_numpy(A, B, C, D, omegas, chunk=256):
    n = A.shape[0]
    p, m = D.shape
    out = np.empty(omegas.shape[0])
    eye = np.eye(n)
    for start in range(0, omegas.shape[0], chunk):
        w = omegas[start : start + chunk]
        if n > 0:
            M = 1j * w[:, None, None] * eye[None] - A[None]
            if p <= m:
                Mt = np.swapaxes(M, 1, 2)
                rhs = np.broadcast_to(C.T.astype(complex), (w.size, n, p))
                Y = np.linalg.solve(Mt, rhs)
                H = np.swapaxes(Y, 1, 2) @ B + D
            else:
                rhs = np.broadcast_to(B.astype(complex), (w.size, n, m))
                H = C @ np.linalg.solve(M, rhs) + D
        else:
            H = np.broadcast_to(D.astype(complex), (w.size, p, m))
        if p <= m:
            G = H @ np.conj(np.swapaxes(H, 1, 2))
        else:
            G = np.conj(np.swapaxes(H, 1, 2)) @ H
        top = np.linalg.eigvalsh(G)[:, -1]
        out[start : start + w.size] = np.sqrt(np.clip(top, 0.0, None))
    return out


def sigma_max_sweep(A, B, C, D, omegas) -> np.ndarray:
    """Largest singular value of ``C (jw I - A)^-1 B + D`` for each ``w``."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    D = np.ascontiguousarray(D, dtype=np.float64)
    omegas = np.ascontiguousarray(np.atleast_1d(omegas), dtype=np.float64)
    if USE_NUMBA:
        return sigma_max_sweep_numba(A, B, C, D, omegas)
    return sigma_max_sweep_numpy(A, B, C, D, omegas)


# --------------------------------------------------------------------------
# discrete-time propagation x[k+1] = M x[k] + N u[k]


@njit(cache=True)
def propagate_numba(M, N, x0, U):
    steps = U.shape[0]
    n = x0.shape[0]
    X = np.empty((steps + 1, n))
    X[0] = x0
    for k in range(steps):
        X[k + 1] = M @ X[k] + N @ U[k]
    return X


def propagate_numpy(M, N, x0, U):
    X = np.empty((U.shape[0] + 1, x0.shape[0]))
    X[0] = x0
    NU = U @ N.T
    for k in range(U.shape[0]):
        X[k + 1] = M @ X[k] + NU[k]
    return X


def propagate(M, N, x0, U) -> np.ndarray:
    """Iterate ``x[k+1] = M x[k] + N u[k]``; returns all ``steps + 1`` states."""
    M = np.ascontiguousarray(M, dtype=np.float64)
    N = np.ascontiguousarray(N, dtype=np.float64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    U = np.ascontiguousarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    if USE_NUMBA:
        return propagate_numba(M, N, x0, U)
    return propagate_numpy(M, N, x0, U)

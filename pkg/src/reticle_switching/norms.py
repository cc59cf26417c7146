"""Peak-gain (H-infinity norm) engine: log-grid sweep plus golden-section refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import sigma_max_sweep
from .systems import StateSpaceModel

GRID_POINTS = 1000
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class NormResult:
    gamma: float
    omega_peak: float
    omega_min: float
    omega_max: float
    n_grid: int
    tol: float


def frequency_grid(A: np.ndarray, n_points: int = GRID_POINTS) -> np.ndarray:
    """Log grid from ``|lambda|_min/100`` to ``|lambda|_max*100`` plus resonance points and 0."""
    ev = np.linalg.eigvals(A) if A.size else np.array([1.0])
    mag = np.abs(ev)
    mag = mag[mag > 0]
    if mag.size == 0:
        mag = np.array([1.0])
    lo = mag.min() / 100.0
    hi = mag.max() * 100.0
    grid = np.geomspace(lo, hi, n_points)
    resonances = np.abs(ev.imag)
    resonances = resonances[resonances > 0]
    return np.unique(np.concatenate([[0.0], grid, resonances]))


def _sigma(sys_: StateSpaceModel, w: float) -> float:
    return float(sigma_max_sweep(sys_.A, sys_.B, sys_.C, sys_.D, np.array([w]))[0])


def _golden_max(f, a: float, b: float, rel: float) -> tuple[float, float]:
    """Maximize ``f`` on ``[a, b]`` (log-spaced search when ``a > 0``)."""
    use_log = a > 0
    lo, hi = (np.log(a), np.log(b)) if use_log else (a, b)
    g = (lambda t: f(np.exp(t))) if use_log else f
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, fd = g(c), g(d)
    for _ in range(200):
        if abs(hi - lo) <= rel * max(1.0, abs(hi) + abs(lo)):
            break
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = g(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = g(d)
    t, v = (c, fc) if fc >= fd else (d, fd)
    return (float(np.exp(t)) if use_log else float(t)), float(v)


def hinf_details(system: StateSpaceModel, tol: float = 1e-4, n_refine: int = 5) -> NormResult:
    if not tol > 0:
        raise ValueError("tol must be positive")
    D = system.D
    d_gain = float(np.linalg.norm(D, 2)) if D.size else 0.0
    if system.n_states == 0 or system.n_inputs == 0 or system.n_outputs == 0:
        return NormResult(d_gain, np.inf, 0.0, 0.0, 0, tol)
    if not system.spectral_abscissa() < 0:
        raise ValueError(f"norm infinite: system has spectral abscissa {system.spectral_abscissa():.3g} >= 0")

    grid = frequency_grid(system.A)
    sig = sigma_max_sweep(system.A, system.B, system.C, system.D, grid)
    best_i = int(np.argmax(sig))
    gamma, w_peak = float(sig[best_i]), float(grid[best_i])

    # local maxima of the sampled curve, largest first
    interior = np.where((sig[1:-1] >= sig[:-2]) & (sig[1:-1] >= sig[2:]))[0] + 1
    candidates = sorted(interior, key=lambda i: -sig[i])[:n_refine]
    f = lambda w: _sigma(system, w)
    for i in candidates:
        w, v = _golden_max(f, float(grid[i - 1]), float(grid[i + 1]), rel=tol * 1e-2)
        if v > gamma:
            gamma, w_peak = v, w
    if d_gain > gamma:
        gamma, w_peak = d_gain, np.inf
    return NormResult(gamma, w_peak, float(grid[1]), float(grid[-1]), int(grid.size), tol)


def hinf_norm(system: StateSpaceModel, tol: float = 1e-4) -> float:
    """Peak singular value of ``C (jw I - A)^-1 B + D`` over ``w >= 0``.

    Raises ``ValueError("norm infinite ...")`` for systems that are not
    asymptotically stable.
    """
    return hinf_details(system, tol).gamma

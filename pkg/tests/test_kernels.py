import numpy as np
import pytest

from reticle_switching import _accel, kernels

numba_only = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def _sys(rng, n=6, m=2, p=3):
    A = rng.normal(size=(n, n)) - 4 * np.eye(n)
    return A, rng.normal(size=(n, m)), rng.normal(size=(p, n)), rng.normal(size=(p, m))


def test_displacement_numpy_matches_direct_sum(rng):
    px, py = rng.uniform(0, 10, 5), rng.uniform(0, 10, 5)
    qx, qy = rng.uniform(0, 10, 7), rng.uniform(0, 10, 7)
    K = kernels.displacement_matrix_numpy(px, py, qx, qy, 1.5, 0.3)
    for i in range(5):
        for j in range(7):
            dx, dy = px[i] - qx[j], py[i] - qy[j]
            r2 = dx * dx + dy * dy + 1.5**2
            assert K[i, j] == pytest.approx(0.3 * dx / r2, rel=1e-14)
            assert K[5 + i, j] == pytest.approx(0.3 * dy / r2, rel=1e-14)


@numba_only
def test_displacement_backends_agree(rng):
    args = (rng.uniform(0, 5, 9), rng.uniform(0, 5, 9), rng.uniform(0, 5, 11), rng.uniform(0, 5, 11), 0.7, 2.0)
    np.testing.assert_allclose(
        kernels.displacement_matrix_numba(*args), kernels.displacement_matrix_numpy(*args), rtol=1e-13, atol=1e-15
    )


def test_sigma_sweep_numpy_matches_svd(rng):
    A, B, C, D = _sys(rng)
    w = np.array([0.0, 0.3, 2.0, 40.0])
    got = kernels.sigma_max_sweep_numpy(A, B, C, D, w)
    for wi, g in zip(w, got):
        H = C @ np.linalg.solve(1j * wi * np.eye(6) - A, B) + D
        assert g == pytest.approx(np.linalg.svd(H, compute_uv=False)[0], rel=1e-12)


@numba_only
def test_sigma_sweep_backends_agree(rng):
    A, B, C, D = _sys(rng)
    w = np.logspace(-2, 2, 50)
    np.testing.assert_allclose(
        kernels.sigma_max_sweep_numba(A, B, C, D, w), kernels.sigma_max_sweep_numpy(A, B, C, D, w), rtol=1e-10
    )


def test_propagate_numpy_is_recursion(rng):
    M, N = 0.5 * rng.normal(size=(4, 4)), rng.normal(size=(4, 2))
    U = rng.normal(size=(10, 2))
    X = kernels.propagate_numpy(M, N, np.ones(4), U)
    x = np.ones(4)
    assert X.shape == (11, 4)
    for k in range(10):
        x = M @ x + N @ U[k]
        np.testing.assert_allclose(X[k + 1], x, rtol=1e-13)


@numba_only
def test_propagate_backends_agree(rng):
    M, N = 0.5 * rng.normal(size=(5, 5)), rng.normal(size=(5, 1))
    U = rng.normal(size=(30, 1))
    np.testing.assert_allclose(
        kernels.propagate_numba(M, N, np.zeros(5), U), kernels.propagate_numpy(M, N, np.zeros(5), U), rtol=1e-12
    )


def test_backend_flag_is_reported():
    assert _accel.backend_name() in ("numba", "numpy")
    if _accel.USE_NUMBA:
        assert _accel.HAVE_NUMBA

import numpy as np
import pytest

from freqfuse.errors import ContractError
from freqfuse.kernel.eig import hermitian_eig, psd_sqrt
from freqfuse.rng import named_stream


def random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return (a + a.T) / 2.0


def test_identity_and_diagonal():
    w, v = hermitian_eig(np.eye(3))
    assert np.allclose(w, 1.0, atol=1e-14)
    assert np.allclose(v @ v.T, np.eye(3), atol=1e-12)
    w, _ = hermitian_eig(np.diag([3.0, -1.0, 2.0]))
    assert np.allclose(w, [-1.0, 2.0, 3.0], atol=1e-14)  # ascending


def test_hand_two_by_two():
    # [[2, 1], [1, 2]] has eigenvalues 1 and 3 with (1, -+1)/sqrt(2) directions
    w, v = hermitian_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert np.allclose(w, [1.0, 3.0], atol=1e-12)
    lo = v[:, 0] / np.sign(v[0, 0])
    hi = v[:, 1] / np.sign(v[0, 1])
    assert np.allclose(lo, [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-10)
    assert np.allclose(hi, [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-10)


def test_reconstruction_and_orthonormality():
    for trial in range(10):
        rng = named_stream(trial, "test-eig")
        n = int(rng.integers(2, 17))
        a = random_symmetric(rng, n)
        w, v = hermitian_eig(a)
        assert np.max(np.abs(v @ np.diag(w) @ v.T - a)) <= 1e-9
        assert np.max(np.abs(v.T @ v - np.eye(n))) <= 1e-10
        assert np.all(np.diff(w) >= -1e-12)


def test_matches_library_eigenvalues():
    # dual route: Jacobi sweep vs the LAPACK path
    for trial in range(5):
        rng = named_stream(trial, "test-eig-vs-lapack")
        a = random_symmetric(rng, 12)
        w, _ = hermitian_eig(a)
        assert np.max(np.abs(w - np.linalg.eigvalsh(a))) <= 1e-9


def test_rejects_bad_input():
    with pytest.raises(ContractError):
        hermitian_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ContractError):
        hermitian_eig(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        hermitian_eig(np.zeros(4))


def test_psd_sqrt_squares_back():
    for trial in range(5):
        rng = named_stream(trial, "test-sqrt")
        b = rng.standard_normal((6, 6))
        a = b @ b.T  # PSD by construction
        r = psd_sqrt(a)
        assert np.max(np.abs(r @ r - a)) <= 1e-8
        assert np.max(np.abs(r - r.T)) <= 1e-10


def test_psd_sqrt_clamps_tiny_negative():
    a = np.diag([1.0, -5e-11])  # within the clamp band
    r = psd_sqrt(a)
    assert r[1, 1] == 0.0


def test_psd_sqrt_rejects_indefinite():
    with pytest.raises(ContractError):
        psd_sqrt(np.diag([1.0, -1e-3]))

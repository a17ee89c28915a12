import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bornwalk.linalg import (BranchCutError, adjoint, expm_hermitian, haar_sample,
                             hermitian_generator, hermiticity_defect, logm_unitary,
                             normalize_amplitudes, unitarity_defect)
from bornwalk.params import BoxOneParams, build_n2


def random_hermitian(n, rng, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * (a + a.conj().T) / 2


def test_defect_identity():
    assert unitarity_defect(np.eye(3)) == 0.0


def test_defect_eq16_matrix():
    p = BoxOneParams(2, [0.6], [[0.0]], 0.0)
    assert unitarity_defect(build_n2(p).matrix) <= 1e-12


def test_defect_all_ones():
    # M M^dagger = [[2, 2], [2, 2]]; minus I has max entry 2
    assert unitarity_defect(np.ones((2, 2))) == pytest.approx(2.0)


def test_defect_rejects_non_square():
    with pytest.raises(ValueError):
        unitarity_defect(np.ones((2, 3)))


def test_defect_stack():
    d = unitarity_defect(np.stack([np.eye(2), 2 * np.eye(2)]))
    np.testing.assert_allclose(d, [0.0, 3.0])


def test_haar_n1_unit_modulus(rng):
    z = haar_sample(1, rng, size=20000)[:, 0, 0]
    np.testing.assert_allclose(np.abs(z), 1.0, atol=1e-14)
    ph = np.mod(np.angle(z), 2 * np.pi)
    counts = np.histogram(ph, bins=8, range=(0, 2 * np.pi))[0]
    from scipy.stats import chisquare
    assert chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("n", [2, 3])
def test_haar_first_moment(n):
    # E|U_11|^2 = 1/N under Haar
    rng = np.random.default_rng(n)
    x = np.abs(haar_sample(n, rng, size=1_000_000)[:, 0, 0]) ** 2
    assert abs(x.mean() - 1 / n) <= 0.005


@pytest.mark.parametrize("n", [2, 3, 4])
def test_haar_all_moments_within_3se(n):
    rng = np.random.default_rng(100 + n)
    x = np.abs(haar_sample(n, rng, size=200_000)) ** 2
    se = x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - 1 / n) <= 3 * se + 1e-12) or \
        np.mean(np.abs(x.mean(axis=0) - 1 / n) <= 3 * se) >= 0.9


@pytest.mark.parametrize("n", [1, 2, 5, 16])
def test_haar_unitary(n):
    rng = np.random.default_rng(n)
    assert np.max(unitarity_defect(haar_sample(n, rng, size=50))) <= 1e-10


def test_generator_no_motion(rng):
    U = haar_sample(3, rng)
    np.testing.assert_allclose(hermitian_generator(U, U, 0.1), 0, atol=1e-13)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_generator_recovers_v0(n):
    rng = np.random.default_rng(n)
    dt = 0.05
    V0 = random_hermitian(n, rng)
    V0 *= 2.0 / (np.abs(np.linalg.eigvalsh(V0)).max() * dt) * 0.9  # ||V0|| dt < pi
    U_to = expm_hermitian(V0, dt)
    V = hermitian_generator(np.eye(n), U_to, dt)
    np.testing.assert_allclose(V, V0, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 5),
       scale=st.floats(0.01, 2.5), dt=st.floats(0.001, 1.0))
def test_generator_hermitian_and_round_trip(seed, n, scale, dt):
    rng = np.random.default_rng(seed)
    U0 = haar_sample(n, rng)
    H = random_hermitian(n, rng)
    H *= scale / np.abs(np.linalg.eigvalsh(H)).max()
    U1 = expm_hermitian(H, 1.0) @ U0
    V = hermitian_generator(U0, U1, dt)
    assert hermiticity_defect(V) <= 1e-12
    np.testing.assert_allclose(expm_hermitian(V, dt) @ U0, U1, atol=1e-10)


def test_generator_branch_cut():
    with pytest.raises(BranchCutError):
        hermitian_generator(np.eye(2), np.diag([1.0, -1.0]), 0.1)


def test_generator_rejects_non_unitary():
    with pytest.raises(ValueError):
        hermitian_generator(np.eye(2), 2 * np.eye(2), 0.1)
    with pytest.raises(ValueError):
        hermitian_generator(np.eye(2), np.eye(2), 0.0)


def test_logm_stack_matches_single(rng):
    W = haar_sample(3, rng, size=5)
    A = logm_unitary(W)
    for i in range(5):
        np.testing.assert_allclose(A[i], logm_unitary(W[i]), atol=1e-13)
        # exp(i A) = W
        np.testing.assert_allclose(expm_hermitian(-A[i]), W[i], atol=1e-12)


def test_normalize_amplitudes():
    c = normalize_amplitudes([np.sqrt(0.8), np.sqrt(0.2)])
    assert c.dtype == complex
    with pytest.raises(ValueError):
        normalize_amplitudes([1.0, 1.0])


def test_adjoint():
    M = np.array([[1, 2j], [3, 4]])
    np.testing.assert_array_equal(adjoint(M), M.conj().T)

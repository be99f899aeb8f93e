import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from conftest import brute_sigma
from khessian.symfun import (
    SymmetricDomainError,
    SymmetricSpectrum,
    admissible_batch,
    char_coeffs_batch,
    eigen_sym,
    in_gamma_k,
    in_gamma_k_tol,
    jacobi_eigh,
    sigma_all,
    sigma_k,
    sigma_k_deleted,
    sigma_k_gradient,
    sigma_k_gradient_batch,
)

# entries below 1e-30 in magnitude are snapped to zero: a product of up to
# seven of them would otherwise underflow and turn a positive sigma into 0
entries = st.floats(-10, 10, allow_nan=False).map(lambda x: x if abs(x) >= 1e-30 else 0.0)
spectra = st.integers(2, 8).flatmap(lambda n: st.lists(entries, min_size=n, max_size=n))


def random_sym(rng, d):
    A = rng.normal(size=(d, d))
    return 0.5 * (A + A.T)


def admissible_matrix(rng, d, k):
    while True:
        S = random_sym(rng, d) + rng.uniform(0.5, 2.0) * np.eye(d)
        if in_gamma_k(np.linalg.eigvalsh(S), k):
            return S


# -- examples -----------------------------------------------------------------


def test_spectrum_sorted_and_validated():
    s = SymmetricSpectrum((3.0, -1.0, 2.0))
    assert s.values == (-1.0, 2.0, 3.0) and s.n == 3
    with pytest.raises(ValueError):
        SymmetricSpectrum((1.0,))


def test_sigma_examples():
    assert sigma_k((1, 1, 1), 2) == 3
    assert sigma_k((3, -1, 2), 2) == pytest.approx(1.0, abs=1e-15)
    assert sigma_k(SymmetricSpectrum((3, -1, 2)), 2) == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(sigma_all((1, 1)), [2, 1])
    np.testing.assert_allclose(sigma_all((-1, 3)), [2, -3])
    np.testing.assert_allclose(sigma_all((0, 0, 5)), [5, 0, 0])


@pytest.mark.parametrize("n,k,c", [(4, 2, 1.5), (7, 3, -0.5), (13, 6, 0.9), (20, 10, 1.1)])
def test_sigma_of_scaled_identity(n, k, c):
    from math import comb

    assert sigma_k([c] * n, k) == pytest.approx(comb(n, k) * c**k, rel=1e-12)


def test_sigma_k_range_errors():
    with pytest.raises(SymmetricDomainError):
        sigma_k((1, 2), 0)
    with pytest.raises(SymmetricDomainError):
        sigma_k((1, 2), 3)


def test_gamma_examples():
    assert in_gamma_k((1, 1, 1), 3)
    assert not in_gamma_k((-1, 3), 2)
    assert in_gamma_k((-1, 3), 1)
    assert in_gamma_k((0, 1), 1)
    assert not in_gamma_k((0, 1), 2)
    assert in_gamma_k_tol((0, 1), 2)
    assert not in_gamma_k_tol((-1e-3, 1), 2)


def test_gradient_examples():
    rng = np.random.default_rng(0)
    S = random_sym(rng, 4)
    np.testing.assert_allclose(sigma_k_gradient(S, 1), np.eye(4), atol=1e-12)
    np.testing.assert_allclose(sigma_k_gradient(np.diag([2.0, 5.0]), 2), np.diag([5.0, 2.0]), atol=1e-14)
    lam = np.array([0.5, 1.0, 2.0, 3.0])
    np.testing.assert_allclose(np.diag(sigma_k_gradient(np.diag(lam), 3)), sigma_k_deleted(lam, 2), rtol=1e-13)


def test_eigen_examples():
    assert eigen_sym(np.eye(2)).values == (1.0, 1.0)
    assert eigen_sym(np.array([[0.0, 1.0], [1.0, 0.0]])).values == (-1.0, 1.0)
    with pytest.raises(ValueError):
        eigen_sym(np.array([[0.0, 1.0], [1.0 + 1e-9, 0.0]]))


def test_jacobi_reconstruction():
    rng = np.random.default_rng(1)
    for _ in range(50):
        S = random_sym(rng, 3)
        w, Q = jacobi_eigh(S)
        assert np.all(np.diff(w) >= 0)
        assert np.linalg.norm(Q @ np.diag(w) @ Q.T - S) <= 1e-12 * np.linalg.norm(S)


def test_batch_matches_scalar():
    rng = np.random.default_rng(2)
    for d in (2, 3, 4):
        H = np.stack([random_sym(rng, d) for _ in range(20)])
        coeffs = char_coeffs_batch(H)
        for m in range(20):
            np.testing.assert_allclose(coeffs[m], sigma_all(np.linalg.eigvalsh(H[m])), rtol=1e-10, atol=1e-12)
        for k in range(1, d + 1):
            G = sigma_k_gradient_batch(H, k)
            for m in range(5):
                np.testing.assert_allclose(G[m], sigma_k_gradient(H[m], k), rtol=1e-9, atol=1e-12)
        adm = admissible_batch(H, d)
        assert list(adm) == [in_gamma_k_tol(np.linalg.eigvalsh(h), d) for h in H]


# -- properties ---------------------------------------------------------------


@settings(max_examples=1000, deadline=None)
@given(spectra)
def test_sigma_all_matches_enumeration(lam):
    got = sigma_all(lam)
    for k in range(1, len(lam) + 1):
        exact, scale = brute_sigma(lam, k)
        assert abs(got[k - 1] - exact) <= 1e-12 * max(scale, 1e-300)


@settings(max_examples=1000, deadline=None)
@given(spectra, st.data())
def test_gamma_nesting(lam, data):
    k = data.draw(st.integers(1, len(lam)))
    if in_gamma_k(lam, k):
        assert all(in_gamma_k(lam, j) for j in range(1, k))
        # positivity of the deleted sigma_{k-1} values inside the cone
        assert np.all(sigma_k_deleted(lam, k - 1) > 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4), st.data())
def test_gradient_finite_differences(seed, d, data):
    k = data.draw(st.integers(1, d))
    rng = np.random.default_rng(seed)
    S = admissible_matrix(rng, d, k)
    G = sigma_k_gradient(S, k)
    f = lambda M: sigma_k(np.linalg.eigvalsh(M), k)  # noqa: E731
    step = 1e-5
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0
            fd = (f(S + step * E) - f(S - step * E)) / (2 * step)
            analytic = G[i, j] * (1 if i == j else 2)
            assert abs(fd - analytic) <= 1e-6 * max(1.0, np.abs(G).max())


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_rotation_invariance_and_equivariance(seed, d):
    rng = np.random.default_rng(seed)
    S = random_sym(rng, d)
    R = special_ortho_group.rvs(d, random_state=seed % (2**31))
    RS = R @ S @ R.T
    RS = 0.5 * (RS + RS.T)
    for k in range(1, d + 1):
        a, b = sigma_k(eigen_sym(S), k), sigma_k(eigen_sym(RS), k)
        assert abs(a - b) <= 1e-12 * max(1.0, np.abs(S).max() ** k)
        np.testing.assert_allclose(sigma_k_gradient(RS, k), R @ sigma_k_gradient(S, k) @ R.T, atol=1e-11 * max(1.0, np.abs(S).max() ** k))

"""Elementary symmetric functions of Hessian spectra.

Scalar routines work on a :class:`SymmetricSpectrum`; the ``*_batch`` routines
act on stacks of small symmetric matrices of shape ``(..., d, d)`` and are what
the grid solver calls at every node.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

DEFAULT_CONE_TOL = 1e-10


class SymmetricDomainError(ValueError):
    """Raised when k lies outside 1..n."""


@dataclass(frozen=True)
class SymmetricSpectrum:
    """Eigenvalues of a real symmetric matrix, stored sorted ascending."""

    values: tuple

    def __post_init__(self):
        vals = tuple(sorted(float(v) for v in np.ravel(self.values)))
        if len(vals) < 2:
            raise ValueError("a spectrum needs at least two eigenvalues")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def _as_values(lam) -> np.ndarray:
    if isinstance(lam, SymmetricSpectrum):
        return lam.as_array()
    return np.asarray(lam, dtype=float)


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise SymmetricDomainError(f"k={k} outside 1..{n}")


def sigma_all(lam) -> np.ndarray:
    """Return (sigma_1, ..., sigma_n).

    Expands prod_i (1 + lambda_i t) one factor at a time, which never forms the
    large cancelling power sums that Newton's identities need.
    """
    vals = _as_values(lam)
    e = np.zeros(vals.size + 1)
    e[0] = 1.0
    for i, v in enumerate(vals):
        e[1 : i + 2] = e[1 : i + 2] + v * e[0 : i + 1]
    return e[1:]


def sigma_k(lam, k: int) -> float:
    vals = _as_values(lam)
    _check_k(k, vals.size)
    return float(sigma_all(vals)[k - 1])


def sigma_k_deleted(lam, k: int) -> np.ndarray:
    """sigma_k of the spectrum with entry i removed, for every i (k may be 0)."""
    vals = _as_values(lam)
    out = np.empty(vals.size)
    for i in range(vals.size):
        rest = np.delete(vals, i)
        out[i] = 1.0 if k == 0 else (sigma_all(rest)[k - 1] if k <= rest.size else 0.0)
    return out


def in_gamma_k(lam, k: int) -> bool:
    """Strict Garding cone test: sigma_j > 0 for j = 1..k."""
    vals = _as_values(lam)
    _check_k(k, vals.size)
    return bool(np.all(sigma_all(vals)[:k] > 0.0))


def in_gamma_k_tol(lam, k: int, tau: float = DEFAULT_CONE_TOL) -> bool:
    """Relaxed cone test sigma_j > -tau (1 + |lambda|_inf)^j used on discrete fields."""
    vals = _as_values(lam)
    _check_k(k, vals.size)
    scale = 1.0 + np.max(np.abs(vals))
    j = np.arange(1, k + 1)
    return bool(np.all(sigma_all(vals)[:k] > -tau * scale**j))


def check_symmetric(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.array_equal(S, S.T):
        raise ValueError("matrix is not exactly symmetric")
    return S


def jacobi_eigh(S, tol: float = 1e-13, max_sweeps: int = 64):
    """Cyclic Jacobi eigen-decomposition; returns (ascending eigenvalues, Q)."""
    A = check_symmetric(S).copy()
    d = A.shape[0]
    Q = np.eye(d)
    norm = np.linalg.norm(A)
    if norm == 0.0:
        return np.zeros(d), Q
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2) * 2.0)
        if off <= tol * norm:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta)) if theta != 0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                R = np.eye(d)
                R[p, p] = R[q, q] = c
                R[p, q] = s
                R[q, p] = -s
                A = R.T @ A @ R
                Q = Q @ R
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], Q[:, order]


def eig2_closed_form(S) -> np.ndarray:
    """Eigenvalues of a symmetric 2x2 matrix, ascending."""
    a, b, c = S[0, 0], S[0, 1], S[1, 1]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    return np.array([mean - rad, mean + rad])


def eigen_sym(S, return_vectors: bool = False):
    """Spectrum of a symmetric matrix: closed form for 2x2, Jacobi otherwise."""
    S = check_symmetric(S)
    if S.shape[0] == 2 and not return_vectors:
        return SymmetricSpectrum(tuple(eig2_closed_form(S)))
    w, Q = jacobi_eigh(S)
    spec = SymmetricSpectrum(tuple(w))
    return (spec, Q) if return_vectors else spec


def sigma_k_gradient(S, k: int) -> np.ndarray:
    """Matrix of partial derivatives d sigma_k(lambda(S)) / d S_ij.

    Computed in the eigenbasis, where it is diagonal with entries
    sigma_{k-1}(lambda | i); this form is exactly rotation-equivariant.
    """
    S = check_symmetric(S)
    _check_k(k, S.shape[0])
    spec, Q = eigen_sym(S, return_vectors=True)
    g = sigma_k_deleted(spec, k - 1)
    G = (Q * g) @ Q.T
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------------
# batched versions on stacks of d x d matrices


def char_coeffs_batch(H: np.ndarray) -> np.ndarray:
    """sigma_1..sigma_d of each matrix in a stack (..., d, d), via principal minors."""
    d = H.shape[-1]
    if d == 2:
        tr = H[..., 0, 0] + H[..., 1, 1]
        det = H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]
        return np.stack([tr, det], axis=-1)
    if d == 3:
        tr = np.trace(H, axis1=-2, axis2=-1)
        m2 = (
            H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]
            + H[..., 0, 0] * H[..., 2, 2] - H[..., 0, 2] * H[..., 2, 0]
            + H[..., 1, 1] * H[..., 2, 2] - H[..., 1, 2] * H[..., 2, 1]
        )
        det = np.linalg.det(H)
        return np.stack([tr, m2, det], axis=-1)
    # Faddeev-LeVerrier for larger d
    shape = H.shape[:-2]
    eye = np.broadcast_to(np.eye(d), shape + (d, d))
    Mk = np.zeros_like(H)
    coeffs = []
    c_prev = np.ones(shape)
    for m in range(1, d + 1):
        Mk = H @ Mk + c_prev[..., None, None] * eye
        c = -np.trace(H @ Mk, axis1=-2, axis2=-1) / m
        coeffs.append(c)
        c_prev = c
    # char poly det(tI - H) = t^d + c1 t^{d-1} + ...; sigma_m = (-1)^m c_m
    return np.stack([(-1) ** (m + 1) * coeffs[m] for m in range(d)], axis=-1)


def sigma_k_gradient_batch(H: np.ndarray, k: int, coeffs: np.ndarray | None = None) -> np.ndarray:
    """sum_{m<k} (-1)^m sigma_{k-1-m}(H) H^m for each matrix in the stack."""
    d = H.shape[-1]
    _check_k(k, d)
    if coeffs is None:
        coeffs = char_coeffs_batch(H)
    sig = np.concatenate([np.ones(H.shape[:-2] + (1,)), coeffs], axis=-1)
    G = np.zeros_like(H)
    P = np.broadcast_to(np.eye(d), H.shape).copy()
    for m in range(k):
        G += ((-1) ** m) * sig[..., k - 1 - m, None, None] * P
        P = P @ H
    return G


def eigvals_batch(H: np.ndarray) -> np.ndarray:
    if H.shape[-1] == 2:
        a, b, c = H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]
        mean = 0.5 * (a + c)
        rad = np.hypot(0.5 * (a - c), b)
        return np.stack([mean - rad, mean + rad], axis=-1)
    return np.linalg.eigvalsh(H)


def admissible_batch(H: np.ndarray, k: int, tau: float = DEFAULT_CONE_TOL, coeffs=None) -> np.ndarray:
    """Vectorised in_gamma_k_tol over a stack of Hessians."""
    if coeffs is None:
        coeffs = char_coeffs_batch(H)
    scale = 1.0 + np.max(np.abs(eigvals_batch(H)), axis=-1)
    ok = np.ones(H.shape[:-2], dtype=bool)
    for j in range(1, k + 1):
        ok &= coeffs[..., j - 1] > -tau * scale**j
    return ok


def binom(n: int, k: int) -> int:
    return comb(n, k)

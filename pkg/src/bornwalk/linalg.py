"""Small complex linear-algebra kernel.

Everything is expressed in the measurement eigenbasis with hbar = 1, so
times are dimensionless and Hermitian generators carry units of 1/time.
Matrix functions of unitaries go through a Hermitian eigendecomposition,
which yields a unitary eigenbasis and keeps reconstructed generators
Hermitian to rounding.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "CONSTRUCTION_TOL",
    "IDENTITY_TOL",
    "NORM_TOL",
    "BranchCutError",
    "as_matrix",
    "adjoint",
    "unitarity_defect",
    "hermiticity_defect",
    "normalize_amplitudes",
    "haar_sample",
    "expm_hermitian",
    "logm_unitary",
    "hermitian_generator",
]

# tolerance for matrices produced by constructors
CONSTRUCTION_TOL = 1e-10
# tolerance for algebraic identities that hold to rounding
IDENTITY_TOL = 1e-12
# norm tolerance for amplitude vectors
NORM_TOL = 1e-12
# eigenphases closer than this to +-pi are treated as sitting on the log branch cut
BRANCH_CUT_MARGIN = 1e-8


class BranchCutError(ValueError):
    """The transfer matrix has an eigenvalue at -1: the step is too large."""


def as_matrix(M) -> np.ndarray:
    """Coerce to a finite square complex array of dimension >= 1."""
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def adjoint(M: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


def unitarity_defect(M) -> float | np.ndarray:
    """Max-norm of ``M M^dagger - I``.

    Accepts a single matrix or a stack ``(..., N, N)``; a stack returns one
    defect per matrix.
    """
    M = np.asarray(M, dtype=complex)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {M.shape}")
    n = M.shape[-1]
    G = M @ adjoint(M) - np.eye(n)
    d = np.abs(G).max(axis=(-1, -2))
    return float(d) if d.ndim == 0 else d


def hermiticity_defect(M) -> float | np.ndarray:
    M = np.asarray(M, dtype=complex)
    d = np.abs(M - adjoint(M)).max(axis=(-1, -2))
    return float(d) if d.ndim == 0 else d


def normalize_amplitudes(c, tol: float = NORM_TOL) -> np.ndarray:
    """Return ``c`` as a complex vector, checking that it is unit-norm."""
    c = np.asarray(c, dtype=complex).ravel()
    if c.size < 1 or not np.all(np.isfinite(c)):
        raise ValueError("amplitudes must be a non-empty finite vector")
    norm2 = float(np.vdot(c, c).real)
    if abs(norm2 - 1.0) > tol:
        raise ValueError(f"amplitudes not normalized: sum |c|^2 = {norm2!r}")
    return c


def haar_sample(n: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw Haar-distributed unitary matrices.

    QR of a complex Ginibre matrix followed by the phase correction
    ``Q -> Q diag(r_jj / |r_jj|)``, which removes the bias of the QR
    convention and makes the law exactly Haar.

    Parameters
    ----------
    n : int
        Matrix dimension (>= 1).
    rng : numpy.random.Generator
    size : int, optional
        If given, return a stack of ``size`` matrices.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    shape = (n, n) if size is None else (size, n, n)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    ph = d / np.abs(d)
    return q * ph[..., None, :]


def expm_hermitian(V, t: float = 1.0) -> np.ndarray:
    """``exp(-i V t)`` for Hermitian ``V`` (or a stack) via its eigendecomposition."""
    V = np.asarray(V, dtype=complex)
    w, Q = np.linalg.eigh(0.5 * (V + adjoint(V)))
    return (Q * np.exp(-1j * w * t)[..., None, :]) @ adjoint(Q)


def logm_unitary(W) -> np.ndarray:
    """Principal logarithm of a unitary matrix, returned as ``-i log W``.

    The result ``A`` is Hermitian with spectrum in ``(-pi, pi)`` and
    satisfies ``exp(i A) = W``.  The eigenbasis comes from the Hermitian
    Cayley transform ``K = i (I - W)(I + W)^-1``, which shares the
    eigenvectors of ``W`` and has eigenvalues ``tan(phase / 2)``; ``eigh``
    then returns an exactly unitary basis even for near-degenerate
    spectra.  Works on stacks; raises :class:`BranchCutError` when an
    eigenvalue sits on -1.
    """
    W = np.asarray(W, dtype=complex)
    if W.ndim < 2 or W.shape[-1] != W.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {W.shape}")
    eye = np.eye(W.shape[-1])
    try:
        # the two factors commute, so (I + W)^-1 (I - W) is the same matrix
        K = 1j * np.linalg.solve(eye + W, eye - W)
    except np.linalg.LinAlgError as exc:
        raise BranchCutError("transfer matrix has an eigenvalue at -1 (step too large)") from exc
    kappa, Q = np.linalg.eigh(0.5 * (K + adjoint(K)))
    ang = 2.0 * np.arctan(kappa)
    if np.any(np.abs(ang) > np.pi - BRANCH_CUT_MARGIN) or not np.all(np.isfinite(ang)):
        raise BranchCutError("transfer matrix has an eigenvalue at -1 (step too large)")
    A = (Q * ang[..., None, :]) @ adjoint(Q)
    return 0.5 * (A + adjoint(A))


def hermitian_generator(U_from, U_to, dt: float) -> np.ndarray:
    """Hermitian ``V`` with ``exp(-i V dt) U_from = U_to``.

    This is ``V = i log(U_to U_from^dagger) / dt`` on the principal branch,
    the one-step version of ``V = i dU/dt U^dagger``.  Stacks of matrices
    are handled elementwise.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    U_from = np.asarray(U_from, dtype=complex)
    U_to = np.asarray(U_to, dtype=complex)
    if U_from.shape != U_to.shape:
        raise ValueError("shape mismatch")
    for M in (U_from, U_to):
        if not np.all(np.isfinite(M)) or np.any(unitarity_defect(M) > CONSTRUCTION_TOL):
            raise ValueError("inputs must be unitary within tolerance")
    # exp(i A) = W  =>  V = -A / dt gives exp(-i V dt) = W
    return -logm_unitary(U_to @ adjoint(U_from)) / dt

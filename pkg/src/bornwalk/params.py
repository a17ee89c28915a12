"""Independent-parameter coordinates for unitary matrices.

A unitary ``N x N`` matrix is described by ``N**2`` independent numbers:

* the complex diagonal entries ``a_k exp(i phi_kk)`` of rows ``1..N-1``,
* the phases ``phi_ij`` (``j != i``) of the off-diagonal entries of rows
  ``1..N-1``,
* the phase ``phi_NN`` of the last diagonal entry.

The off-diagonal magnitudes of rows ``1..N-1`` and the whole last row
(magnitudes and phases ``xi_k``) are dependent and are solved for so the
matrix comes out unitary.  First-row magnitudes are kept non-negative;
magnitudes in the other rows may carry a sign.

``N = 2`` has a closed form.  ``N = 3`` is solved by the similar-triangle
construction: the orthogonality of rows 1 and 2 fixes the shape of a
triangle in the complex plane, leaving one scale ``p`` that is found from
a quadratic.  ``N >= 4`` has no known closed form and is completed
numerically by least squares on the orthonormality residual.

All builders accept a :class:`BoxOneParams` whose arrays may carry a
leading batch axis; ``build_*`` return :class:`RealizedUnitary` for a
single parameter set and :func:`realize_matrices` handles batches.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import least_squares

from .linalg import unitarity_defect

__all__ = [
    "TWO_PI",
    "BoxOneParams",
    "RealizedUnitary",
    "ConstructionError",
    "InfeasibleParametersError",
    "DegenerateTriangleError",
    "sample_stationary",
    "identity_params",
    "build_n2",
    "triangle_coefficients",
    "n3_quadratic",
    "build_n3",
    "build_general",
    "realize",
    "realize_matrices",
    "params_from_matrix",
]

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

N3_TOL = 1e-9
GENERAL_TOL = 1e-8
TRIANGLE_FLOOR = 1e-9
DIAG_FLOOR = 1e-6
LINEAR_A_TOL = 1e-12
GENERAL_RESTARTS = 8
GENERAL_MAX_ITER = 10_000


class ConstructionError(RuntimeError):
    """No unitary completion was found for a parameter set."""

    def __init__(self, message: str, residual: float = np.nan):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual


class InfeasibleParametersError(ConstructionError):
    """Numerical completion failed from every start (N >= 4)."""


class DegenerateTriangleError(ValueError):
    """The three phase directions are collinear; no similar-triangle family."""


def _wrap(phi):
    out = np.mod(phi, TWO_PI)
    # mod can round up to exactly 2 pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


@dataclass(frozen=True)
class BoxOneParams:
    """Independent parameters of a unitary matrix.

    Attributes
    ----------
    dim : int
        Matrix dimension ``N >= 2``.
    diag : ndarray, complex, shape ``(..., N-1)``
        Diagonal entries of rows ``1..N-1`` (inside the closed unit disk).
    offdiag_phases : ndarray, shape ``(..., N-1, N-1)``
        Row ``i`` holds the phases of columns ``j != i`` in increasing ``j``.
    last_diag_phase : ndarray, shape ``(...)``
        Phase of entry ``(N, N)``.

    Leading axes are a batch shape shared by all three arrays.
    """

    dim: int
    diag: np.ndarray
    offdiag_phases: np.ndarray
    last_diag_phase: np.ndarray

    def __post_init__(self):
        n = int(self.dim)
        if n < 2:
            raise ValueError("dim must be >= 2")
        diag = np.array(self.diag, dtype=complex)
        off = np.array(self.offdiag_phases, dtype=float)
        last = np.array(self.last_diag_phase, dtype=float)
        batch = last.shape
        if diag.shape != batch + (n - 1,):
            raise ValueError(f"diag shape {diag.shape} != {batch + (n - 1,)}")
        if off.shape != batch + (n - 1, n - 1):
            raise ValueError(f"offdiag_phases shape {off.shape} != {batch + (n - 1, n - 1)}")
        if np.any(np.abs(diag) > 1.0 + 1e-12):
            raise ValueError("diagonal entries must lie in the closed unit disk")
        for ph in (off, last):
            if np.any((ph < 0) | (ph >= TWO_PI)) or not np.all(np.isfinite(ph)):
                raise ValueError("phases must lie in [0, 2 pi)")
        for a in (diag, off, last):
            a.setflags(write=False)
        object.__setattr__(self, "dim", n)
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "offdiag_phases", off)
        object.__setattr__(self, "last_diag_phase", last)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.last_diag_phase.shape

    @property
    def n_params(self) -> int:
        """Real parameter count, ``2(N-1) + (N-1)**2 + 1 == N**2``."""
        n = self.dim
        return 2 * (n - 1) + (n - 1) ** 2 + 1

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("unbatched BoxOneParams has no len()")
        return self.batch_shape[0]

    def __getitem__(self, idx) -> BoxOneParams:
        if not self.batch_shape:
            raise TypeError("unbatched BoxOneParams is not indexable")
        return BoxOneParams(self.dim, self.diag[idx], self.offdiag_phases[idx],
                            self.last_diag_phase[idx])

    def phase_grid(self) -> np.ndarray:
        """Phases of rows ``1..N-1`` as a ``(..., N-1, N)`` grid.

        Diagonal slots hold ``arg(diag_k)`` wrapped to ``[0, 2 pi)``.
        """
        n = self.dim
        grid = np.empty(self.batch_shape + (n - 1, n))
        for i in range(n - 1):
            cols = [j for j in range(n) if j != i]
            grid[..., i, cols] = self.offdiag_phases[..., i, :]
            grid[..., i, i] = _wrap(np.angle(self.diag[..., i]))
        return grid

    def as_vector(self) -> np.ndarray:
        """Flatten to ``N**2`` reals: diag (re, im), off-diagonal phases, last phase."""
        d = np.stack([self.diag.real, self.diag.imag], axis=-1).reshape(self.batch_shape + (-1,))
        o = self.offdiag_phases.reshape(self.batch_shape + (-1,))
        return np.concatenate([d, o, self.last_diag_phase[..., None]], axis=-1)

    @classmethod
    def stack(cls, items) -> BoxOneParams:
        items = list(items)
        return cls(items[0].dim,
                   np.stack([p.diag for p in items]),
                   np.stack([p.offdiag_phases for p in items]),
                   np.stack([p.last_diag_phase for p in items]))


@dataclass(frozen=True)
class RealizedUnitary:
    """A parameter set together with the unitary matrix it determines.

    ``dependents`` holds ``u`` (signed magnitudes of rows ``1..N-1``, with
    ``a_k`` on the diagonal), ``last_magnitudes`` and ``xi`` (last-row
    magnitudes and the phases of its first ``N-1`` entries).
    ``branch_tags`` records how the solution was obtained.
    """

    params: BoxOneParams
    matrix: np.ndarray
    dependents: dict[str, Any] = field(default_factory=dict)
    branch_tags: dict[str, Any] = field(default_factory=dict)

    @property
    def defect(self) -> float:
        return unitarity_defect(self.matrix)


def sample_stationary(n: int, rng: np.random.Generator, size: int | None = None) -> BoxOneParams:
    """Draw parameters from the walk's stationary law.

    Diagonal entries are uniform on the closed unit disk, every phase is
    uniform on ``[0, 2 pi)``, all independent.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    batch = () if size is None else (size,)
    r = np.sqrt(rng.random(batch + (n - 1,)))
    ang = TWO_PI * rng.random(batch + (n - 1,))
    off = TWO_PI * rng.random(batch + (n - 1, n - 1))
    last = TWO_PI * rng.random(batch)
    return BoxOneParams(n, r * np.exp(1j * ang), off, last)


def identity_params(n: int, offdiag_phases=None) -> BoxOneParams:
    """Parameters realizing the identity; off-diagonal phases are free there."""
    off = np.zeros((n - 1, n - 1)) if offdiag_phases is None else offdiag_phases
    return BoxOneParams(n, np.ones(n - 1, dtype=complex), off, 0.0)


def _last_row(R: np.ndarray, phi_last) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unit row orthogonal to the rows of ``R`` with entry ``N`` of phase ``phi_last``.

    Batched over leading axes.  Returns ``(row, magnitudes, xi)``; the
    magnitude of the last entry is made non-negative.
    """
    n = R.shape[-1]
    if n == 3:
        r1, r2 = R[..., 0, :], R[..., 1, :]
        w = np.conj(np.cross(r1, r2))
    else:
        _, _, vh = np.linalg.svd(R)
        w = vh[..., -1, :]
    w = w / np.linalg.norm(w, axis=-1, keepdims=True)
    wl = w[..., -1]
    beta = np.where(np.abs(wl) > 0, np.asarray(phi_last) - np.angle(wl), 0.0)
    w = w * np.exp(1j * beta)[..., None]
    mags = np.abs(w)
    xi = _wrap(np.angle(w[..., :-1]))
    return w, mags, xi


# ----------------------------------------------------------------------------
# N = 2

def _n2_matrix(diag, off, last) -> np.ndarray:
    d = diag[..., 0]
    a1 = np.abs(d)
    phi11 = np.angle(d)
    phi12 = off[..., 0, 0]
    u12 = np.sqrt(np.clip(1.0 - a1 * a1, 0.0, None))
    U = np.empty(d.shape + (2, 2), dtype=complex)
    U[..., 0, 0] = d
    U[..., 0, 1] = u12 * np.exp(1j * phi12)
    U[..., 1, 0] = -u12 * np.exp(1j * (last + phi11 - phi12))
    U[..., 1, 1] = a1 * np.exp(1j * last)
    return U


def build_n2(params: BoxOneParams) -> RealizedUnitary:
    """Closed-form ``N = 2`` matrix, with ``u12 = sqrt(1 - a1**2)``."""
    if params.dim != 2 or params.batch_shape:
        raise ValueError("build_n2 needs a single N = 2 parameter set")
    U = _n2_matrix(params.diag, params.offdiag_phases, params.last_diag_phase)
    a1 = abs(params.diag[0])
    u12 = np.sqrt(max(1.0 - a1 * a1, 0.0))
    u = np.array([[a1, u12]])
    return RealizedUnitary(
        params, U,
        dependents={"u": u, "last_magnitudes": np.abs(U[1]), "xi": _wrap(np.angle(U[1, :1]))},
        branch_tags={"route": "closed-form"},
    )


# ----------------------------------------------------------------------------
# N = 3

def triangle_coefficients(delta1: float, delta2: float, delta3: float,
                          floor: float = TRIANGLE_FLOOR) -> tuple[float, float]:
    """Real ``s1, s2`` with ``exp(i d1) + s1 exp(i d2) + s2 exp(i d3) = 0``.

    The coefficients may be negative.  Raises
    :class:`DegenerateTriangleError` if ``|sin(d2 - d3)| < floor``.
    """
    s1, s2, det = _triangle(np.asarray(delta1, float), np.asarray(delta2, float),
                            np.asarray(delta3, float))
    if np.any(np.abs(det) < floor):
        raise DegenerateTriangleError("collinear phase directions: no similar-triangle family")
    return float(s1), float(s2)


def _triangle(d1, d2, d3):
    # Cramer's rule on the real and imaginary parts
    det = np.sin(d3 - d2)
    safe = np.where(det == 0, 1.0, det)
    return np.sin(d1 - d3) / safe, np.sin(d2 - d1) / safe, det


def _n3_phases(params: BoxOneParams):
    grid = params.phase_grid()
    a1 = np.abs(params.diag[..., 0])
    a2 = np.abs(params.diag[..., 1])
    d1 = grid[..., 0, 0] - grid[..., 1, 0]
    d2 = grid[..., 0, 1] - grid[..., 1, 1]
    d3 = grid[..., 0, 2] - grid[..., 1, 2]
    return grid, a1, a2, d1, d2, d3


def n3_quadratic(params: BoxOneParams) -> dict[str, np.ndarray]:
    """Coefficients of the ``N = 3`` quadratics and their discriminants.

    Returns a dict with ``s1, s2`` (triangle coefficients), ``A, B, C`` of
    ``-A p**4 + B p**2 - C = 0``, its discriminant ``d = B**2 - 4 A C``
    (also evaluated in the sum-of-squares form as ``d_sos``), and
    ``Bu, Cu`` of ``x**2 + Bu x - Cu = 0`` for ``x = u13**2``.
    Works on batched parameters.
    """
    if params.dim != 3:
        raise ValueError("n3_quadratic needs N = 3")
    _, a1, a2, d1, d2, d3 = _n3_phases(params)
    s1, s2, _ = _triangle(d1, d2, d3)
    with np.errstate(divide="ignore", invalid="ignore"):
        q1 = (1 - a1 ** 2) / a1 ** 2
        q2 = (1 - a2 ** 2) / a2 ** 2
        A = (s1 / (a1 * a2)) ** 2
        B = q1 + s1 ** 2 * q2 + s2 ** 2
        C = (1 - a1 ** 2) * (1 - a2 ** 2)
        d = B ** 2 - 4 * A * C
        d_sos = (q1 - s1 ** 2 * q2 + s2 ** 2) ** 2 + 4 * s1 ** 2 * s2 ** 2 * q2
        Bu = -(1 - a1 ** 2) + a1 ** 2 * s1 ** 2 * q2 + a1 ** 2 * s2 ** 2
    Cu = a1 ** 2 * s2 ** 2 * (1 - a1 ** 2)
    return {"s1": s1, "s2": s2, "A": A, "B": B, "C": C, "d": d, "d_sos": d_sos,
            "Bu": Bu, "Cu": Cu}


def _larger_root(Bu, Cu):
    """Larger root of ``x**2 + Bu x - Cu`` without cancellation."""
    disc = np.sqrt(Bu * Bu + 4 * Cu)
    with np.errstate(divide="ignore", invalid="ignore"):
        alt = 2 * Cu / (Bu + disc)
    return np.where(Bu <= 0, 0.5 * (-Bu + disc), np.where(Bu + disc > 0, alt, 0.0))


def _n3_core(params: BoxOneParams):
    """Unsigned solution pieces shared by the scalar and batched builders."""
    grid, a1, a2, d1, d2, d3 = _n3_phases(params)
    q = n3_quadratic(params)
    s1, s2 = q["s1"], q["s2"]
    A = q["A"]
    linear = A < LINEAR_A_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        u13sq_quad = _larger_root(q["Bu"], q["Cu"])
        p2_lin = q["C"] / q["B"]
        u13sq_lin = 1 - a1 ** 2 - (s1 / a2) ** 2 * p2_lin
        u13sq = np.where(linear, u13sq_lin, u13sq_quad)
        u13sq = np.clip(u13sq, 0.0, 1.0 - a1 ** 2)
        # p**2 from the row-1 norm, or from the row-2 norm when s1 is the small one
        p2_row1 = (a2 / s1) ** 2 * (1 - a1 ** 2 - u13sq)
        p2_row2 = (1 - a2 ** 2) * a1 ** 2 * u13sq / (u13sq + a1 ** 2 * s2 ** 2)
        use_row1 = np.abs(s1) >= np.abs(s2)
        p2 = np.where(linear, p2_lin, np.where(use_row1, p2_row1, p2_row2))
    p2 = np.clip(np.nan_to_num(p2), 0.0, None)
    return grid, a1, a2, s1, s2, np.sqrt(p2), np.sqrt(u13sq), use_row1 & ~linear, linear


def _n3_rows(grid, a1, a2, u12, u13, u21, u23):
    e = np.exp(1j * grid)
    R = np.empty(grid.shape, dtype=complex)
    R[..., 0, 0] = a1 * e[..., 0, 0]
    R[..., 0, 1] = u12 * e[..., 0, 1]
    R[..., 0, 2] = u13 * e[..., 0, 2]
    R[..., 1, 0] = u21 * e[..., 1, 0]
    R[..., 1, 1] = a2 * e[..., 1, 1]
    R[..., 1, 2] = u23 * e[..., 1, 2]
    return R


def _n3_signed(a1, a2, s1, s2, pabs, u13, signs):
    sp, s21, s12, s23 = signs
    p = sp * pabs
    u21 = s21 * p / a1
    u12 = s12 * s1 * p / a2
    with np.errstate(divide="ignore", invalid="ignore"):
        u23_tri = s2 * p / u13
    u23_norm = np.sqrt(np.clip(1 - a2 ** 2 - u21 ** 2, 0.0, None))
    u23 = s23 * np.where(u13 > 1e-12, u23_tri, np.sign(s2 * p) * u23_norm)
    return u12, u21, np.nan_to_num(u23)


# all-positive first, then single flips (p first), then the rest
_SIGN_ORDER = sorted(itertools.product((1, -1), repeat=4),
                     key=lambda s: (sum(x < 0 for x in s), [x < 0 for x in s][::-1]))


def build_n3(params: BoxOneParams, floor: float = DIAG_FLOOR) -> RealizedUnitary:
    """Solve the dependent entries of an ``N = 3`` matrix.

    Inside the box ``floor < a1, a2 < 1 - floor`` the similar-triangle
    construction is used: the larger root of the quartic-in-``u13`` gives
    ``u13**2``, ``p`` follows from a row norm, and ``u21, u12, u23`` from
    the triangle coefficients.  Sign branches of ``(p, u21, u12, u23)`` are
    tried in a fixed order and the first with a unitarity defect below
    ``1e-9`` is kept.  Parameters on the box edge (including the identity)
    or with a collinear phase triple fall back to numerical completion.
    """
    if params.dim != 3 or params.batch_shape:
        raise ValueError("build_n3 needs a single N = 3 parameter set")
    a = np.abs(params.diag)
    _, _, _, d1, d2, d3 = _n3_phases(params)
    degenerate = abs(np.sin(d3 - d2)) < TRIANGLE_FLOOR
    if np.any(a <= floor) or np.any(a >= 1 - floor) or degenerate:
        reason = "collinear-phases" if degenerate else "diag-on-box-edge"
        res = _solve_numeric(params)
        res.branch_tags["fallback"] = reason
        return res

    grid, a1, a2, s1, s2, pabs, u13, use_row1, linear = _n3_core(params)
    best = np.inf
    for signs in _SIGN_ORDER:
        u12, u21, u23 = _n3_signed(a1, a2, s1, s2, pabs, u13, signs)
        if u12 < 0:
            continue
        R = _n3_rows(grid, a1, a2, u12, u13, u21, u23)
        w, mags, xi = _last_row(R, params.last_diag_phase)
        U = np.vstack([R, w])
        dfc = unitarity_defect(U)
        best = min(best, dfc)
        if dfc <= N3_TOL:
            u = np.array([[a1, u12, u13], [u21, a2, u23]], dtype=float)
            tags = {"route": "triangle", "signs": signs, "root": "+",
                    "p2_from": "linear" if linear else ("row1-norm" if use_row1 else "row2-norm")}
            return RealizedUnitary(params, U, {"u": u, "last_magnitudes": mags, "xi": xi}, tags)
    raise ConstructionError("construction failed: no sign branch is unitary", best)


def _n3_batch(params: BoxOneParams, floor: float = DIAG_FLOOR):
    """Vectorized ``N = 3`` builder; returns matrices and a needs-fallback mask."""
    grid, a1, a2, s1, s2, pabs, u13, _, _ = _n3_core(params)
    sp = np.where(s1 < 0, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u12, u21, u23 = _n3_signed(a1, a2, s1, s2, pabs, u13, (sp, 1.0, 1.0, 1.0))
    R = _n3_rows(grid, a1, a2, u12, u13, u21, u23)
    w, _, _ = _last_row(R, params.last_diag_phase)
    U = np.concatenate([R, w[..., None, :]], axis=-2)
    U = np.nan_to_num(U)
    _, _, _, d1, d2, d3 = _n3_phases(params)
    a = np.abs(params.diag)
    bad = (np.any(a <= floor, axis=-1) | np.any(a >= 1 - floor, axis=-1)
           | (np.abs(np.sin(d3 - d2)) < TRIANGLE_FLOOR) | (unitarity_defect(U) > N3_TOL))
    return U, bad


# ----------------------------------------------------------------------------
# N >= 4 (and N = 3 edge cases): numerical completion

def _unknown_index(n):
    return [(i, j) for i in range(n - 1) for j in range(n) if j != i]


def _rows_from_x(x, params, grid, idx):
    n = params.dim
    R = np.zeros((n - 1, n), dtype=complex)
    R[np.arange(n - 1), np.arange(n - 1)] = params.diag
    ii, jj = zip(*idx)
    R[ii, jj] = x * np.exp(1j * grid[ii, jj])
    return R


def _residual_and_jac(x, params, grid, idx):
    n = params.dim
    m = n - 1
    R = _rows_from_x(x, params, grid, idx)
    G = R @ R.conj().T - np.eye(m)
    iu = np.triu_indices(m, 1)
    res = np.concatenate([np.diag(G).real, G[iu].real, G[iu].imag])
    J = np.empty((res.size, len(idx)))
    for col, (i, j) in enumerate(idx):
        e = np.exp(1j * grid[i, j])
        dG = np.zeros((m, m), dtype=complex)
        dG[i, :] += e * np.conj(R[:, j])
        dG[:, i] += R[:, j] * np.conj(e)
        J[:, col] = np.concatenate([np.diag(dG).real, dG[iu].real, dG[iu].imag])
    return res, J


def _random_start(params, rng, idx):
    n = params.dim
    a = np.abs(params.diag)
    x = np.empty(len(idx))
    for i in range(n - 1):
        sel = [k for k, (r, _) in enumerate(idx) if r == i]
        v = rng.standard_normal(len(sel))
        v *= np.sqrt(max(1 - a[i] ** 2, 0.0)) / max(np.linalg.norm(v), 1e-300)
        x[sel] = np.abs(v) if i == 0 else v
    return x


def _solve_numeric(params: BoxOneParams, rng: np.random.Generator | None = None,
                   restarts: int = GENERAL_RESTARTS, max_iter: int = GENERAL_MAX_ITER,
                   tol: float = GENERAL_TOL) -> RealizedUnitary:
    n = params.dim
    rng = np.random.default_rng(0) if rng is None else rng
    grid = params.phase_grid()
    idx = _unknown_index(n)
    lo = np.array([0.0 if i == 0 else -1.0 for i, _ in idx])
    hi = np.ones(len(idx))

    def assemble(x):
        R = _rows_from_x(x, params, grid, idx)
        w, mags, xi = _last_row(R, params.last_diag_phase)
        return np.vstack([R, w]), mags, xi

    def result(x, iters, start, residual):
        U, mags, xi = assemble(x)
        u = np.zeros((n - 1, n))
        u[np.arange(n - 1), np.arange(n - 1)] = np.abs(params.diag)
        ii, jj = zip(*idx)
        u[ii, jj] = x
        tags = {"route": "numeric", "iterations": iters, "start": start, "residual": residual}
        return RealizedUnitary(params, U, {"u": u, "last_magnitudes": mags, "xi": xi}, tags)

    # the all-zero start is exact when every diagonal magnitude is 1
    x0 = np.zeros(len(idx))
    U0, _, _ = assemble(x0)
    if unitarity_defect(U0) <= tol:
        return result(x0, 0, 0, unitarity_defect(U0))

    best = np.inf
    total = 0
    for start in range(restarts):
        x0 = _random_start(params, rng, idx)
        sol = least_squares(lambda x: _residual_and_jac(x, params, grid, idx)[0], x0,
                            jac=lambda x: _residual_and_jac(x, params, grid, idx)[1],
                            bounds=(lo, hi), method="trf", xtol=1e-15, ftol=1e-15,
                            gtol=1e-15, max_nfev=max_iter)
        total += sol.nfev
        U, _, _ = assemble(sol.x)
        dfc = unitarity_defect(U)
        best = min(best, dfc)
        if dfc <= tol:
            return result(sol.x, total, start + 1, dfc)
    log.info("possibly infeasible parameter set (N=%d, best defect %.3e): %s",
             n, best, params.as_vector().tolist())
    raise InfeasibleParametersError("possibly infeasible parameter set", best)


def build_general(params: BoxOneParams, rng: np.random.Generator | None = None,
                  restarts: int = GENERAL_RESTARTS,
                  max_iter: int = GENERAL_MAX_ITER) -> RealizedUnitary:
    """Numerically complete an ``N >= 4`` matrix.

    The off-diagonal magnitudes of rows ``1..N-1`` are found by bounded
    least squares on the orthonormality residual of those rows (analytic
    Jacobian, ``restarts`` random starts).  The last row is the orthogonal
    complement rotated so entry ``(N, N)`` has the prescribed phase.
    ``branch_tags`` records iterations, the successful start and the final
    residual.  Raises :class:`InfeasibleParametersError` when no start
    reaches a defect of ``1e-8``.
    """
    if params.dim < 4 or params.batch_shape:
        raise ValueError("build_general needs a single N >= 4 parameter set")
    return _solve_numeric(params, rng, restarts, max_iter)


def realize(params: BoxOneParams) -> RealizedUnitary:
    """Dispatch to the builder for ``params.dim``."""
    if params.batch_shape:
        raise ValueError("realize takes a single parameter set; use realize_matrices")
    if params.dim == 2:
        return build_n2(params)
    if params.dim == 3:
        return build_n3(params)
    return build_general(params)


def realize_matrices(params: BoxOneParams) -> tuple[np.ndarray, np.ndarray]:
    """Realize a batch of parameter sets.

    Returns ``(matrices, failed)`` where ``matrices`` has shape
    ``batch + (N, N)`` and ``failed`` flags entries whose construction
    raised (those matrices are NaN).
    """
    n = params.dim
    batch = params.batch_shape
    if n == 2:
        return _n2_matrix(params.diag, params.offdiag_phases, params.last_diag_phase), \
            np.zeros(batch, dtype=bool)
    failed = np.zeros(batch, dtype=bool)
    if n == 3:
        U, redo = _n3_batch(params)
    else:
        U = np.empty(batch + (n, n), dtype=complex)
        redo = np.ones(batch, dtype=bool)
    for pos in zip(*np.nonzero(redo)):
        try:
            U[pos] = realize(params[pos]).matrix
        except ConstructionError:
            U[pos] = np.nan
            failed[pos] = True
    return U, failed


def params_from_matrix(U: np.ndarray) -> BoxOneParams:
    """Read the independent parameters back off a unitary matrix.

    Off-diagonal phases are taken so that first-row magnitudes are
    non-negative; for other rows the phase is the entry's argument, which
    is correct up to the sign ambiguity absorbed by the magnitude.
    """
    U = np.asarray(U, dtype=complex)
    n = U.shape[-1]
    diag = np.array([U[i, i] for i in range(n - 1)])
    off = np.empty((n - 1, n - 1))
    for i in range(n - 1):
        cols = [j for j in range(n) if j != i]
        off[i] = _wrap(np.angle(U[i, cols]))
    last = _wrap(np.angle(U[n - 1, n - 1]))
    return BoxOneParams(n, diag, off, last)

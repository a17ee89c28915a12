"""Reconstruction of the stochastic potential from walk trajectories.

With the diagonal factor fixed to the identity, the full Hamiltonian is
the stochastic term ``V = i dU/dt U^dagger``.  Per step it is recovered
exactly as the Hermitian generator of the transfer matrix
``U_{n+1} U_n^dagger``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import BranchCutError, adjoint, expm_hermitian, hermitian_generator

__all__ = [
    "HermitianSeries",
    "reconstruct_potential",
    "reconstruct_from_matrices",
    "propagate",
    "propagate_matrix",
    "potential_stats",
    "write_series_csv",
]


@dataclass(frozen=True)
class HermitianSeries:
    """Per-step generators: ``generators[n]`` drives ``times[n] -> times[n+1]``."""

    times: np.ndarray
    generators: np.ndarray
    dt: float

    def __len__(self):
        return self.generators.shape[0]

    @property
    def norms(self) -> np.ndarray:
        """Operator (spectral) norm of each generator."""
        if len(self) == 0:
            return np.zeros(0)
        return np.abs(np.linalg.eigvalsh(self.generators)).max(axis=-1)


def reconstruct_from_matrices(mats: np.ndarray, dt: float, times=None) -> HermitianSeries:
    mats = np.asarray(mats, dtype=complex)
    if len(mats) < 2:
        gens = np.zeros((0,) + mats.shape[1:], dtype=complex)
    else:
        try:
            gens = hermitian_generator(mats[:-1], mats[1:], dt)
        except BranchCutError:
            # locate the offending step for the message
            for i in range(len(mats) - 1):
                try:
                    hermitian_generator(mats[i], mats[i + 1], dt)
                except BranchCutError as exc:
                    raise BranchCutError(f"step {i}: {exc}; reduce dt or sigma") from exc
            raise
    if times is None:
        times = dt * np.arange(len(mats))
    return HermitianSeries(np.asarray(times, float)[:-1] if len(mats) else np.zeros(0), gens, dt)


def reconstruct_potential(traj) -> HermitianSeries:
    """Generators for every step of a materialized :class:`WalkTrajectory`."""
    if traj.matrices is None:
        raise ValueError("trajectory must be materialized")
    return reconstruct_from_matrices(traj.matrices, traj.config.dt, traj.times)


def propagate_matrix(series: HermitianSeries, n: int | None = None) -> np.ndarray:
    """Ordered product of the step propagators applied to the identity."""
    if n is None:
        n = series.generators.shape[-1]
    U = np.eye(n, dtype=complex)
    for P in expm_hermitian(series.generators, series.dt):
        U = P @ U
    return U


def propagate(c0, series: HermitianSeries) -> np.ndarray:
    """Apply ``exp(-i V_n dt)`` step by step to the amplitudes ``c0``."""
    c = np.asarray(c0, dtype=complex).copy()
    for P in expm_hermitian(series.generators, series.dt):
        c = P @ c
    return c


def _autocorr(x: np.ndarray, max_lag: int) -> np.ndarray:
    x = x - x.mean()
    var = float(np.dot(x, x))
    if var == 0:
        return np.zeros(max_lag + 1)
    return np.array([np.dot(x[: x.size - k], x[k:]) / var for k in range(max_lag + 1)])


def potential_stats(series: HermitianSeries, max_lag: int = 10,
                    flag_factor: float = 10.0) -> dict:
    """Descriptive statistics of a generator series.

    Reports the distribution of per-step operator norms, off-diagonal
    magnitudes, the autocorrelation of every entry's real part up to
    ``max_lag``, and steps whose norm exceeds ``flag_factor`` times the
    median (typically branch switches of the dependent entries).
    """
    norms = series.norms
    if norms.size == 0:
        return {"steps": 0}
    G = series.generators
    n = G.shape[-1]
    off = np.abs(G[:, ~np.eye(n, dtype=bool)])
    med = float(np.median(norms))
    lag = min(max_lag, max(norms.size - 1, 0))
    ac = {f"{r + 1},{c + 1}": _autocorr(G[:, r, c].real, lag).tolist()
          for r in range(n) for c in range(r, n)}
    flagged = np.nonzero(norms > flag_factor * med)[0] if med > 0 else np.zeros(0, int)
    return {
        "steps": int(norms.size),
        "norm_mean": float(norms.mean()),
        "norm_median": med,
        "norm_quantiles": {q: float(np.quantile(norms, q)) for q in (0.05, 0.25, 0.75, 0.95)},
        "norm_max": float(norms.max()),
        "offdiag_mean": float(off.mean()),
        "offdiag_max": float(off.max()),
        "autocorrelation": ac,
        "flagged_steps": flagged.tolist(),
        "hermiticity_max": float(np.abs(G - adjoint(G)).max()),
    }


def write_series_csv(series: HermitianSeries, path: str | Path) -> None:
    """CSV with ``t``, ``V{r}_{c}_re, V{r}_{c}_im`` row-major, and ``norm``."""
    n = series.generators.shape[-1] if len(series) else 0
    cols = ["t"] + [f"V{r}_{c}_{part}" for r in range(1, n + 1) for c in range(1, n + 1)
                    for part in ("re", "im")] + ["norm"]
    norms = series.norms
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(len(series)):
            flat = series.generators[i].ravel()
            w.writerow([repr(float(series.times[i]))]
                       + [repr(float(x)) for z in flat for x in (z.real, z.imag)]
                       + [repr(float(norms[i]))])

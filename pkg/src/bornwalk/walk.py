"""Random walk of the independent parameters, started from the identity.

Each diagonal entry performs an isotropic Gaussian walk in the complex
plane, folded back into the unit disk radially (``r -> 2 - r``); each
phase performs a Gaussian walk wrapped modulo ``2 pi``.  Increments have
standard deviation ``sigma * sqrt(dt)`` per real component and are
independent across parameters.  Dependent matrix entries are re-solved
from scratch at every step.

Random streams: a single walk uses ``SeedSequence(seed)``; batched
walkers are grouped in fixed-size blocks and block ``b`` uses
``SeedSequence([seed, b])``, so results do not depend on how blocks are
spread over workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import (TWO_PI, BoxOneParams, ConstructionError, RealizedUnitary, realize,
                     realize_matrices)

__all__ = [
    "WalkConfig",
    "WalkTrajectory",
    "WalkError",
    "initial_params",
    "step",
    "reflect_into_disk",
    "n_steps",
    "run_walk",
    "block_rng",
    "trajectory_columns",
    "write_trajectory_csv",
]

BLOCK_SIZE = 256


class WalkError(RuntimeError):
    """Matrix construction failed somewhere along a trajectory."""

    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"construction failed at step {step_index}: {cause}")
        self.step_index = step_index


@dataclass(frozen=True)
class WalkConfig:
    dt: float = 0.01
    sigma: float = 0.3
    t_max: float = 50.0
    seed: int = 0
    boundary: str = "reflect"
    phase_wrap: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.t_max < 0:
            raise ValueError("t_max must be non-negative")
        if self.boundary != "reflect":
            raise ValueError("only the reflecting disk boundary is supported")
        if not self.phase_wrap:
            raise ValueError("phases are always wrapped modulo 2 pi")


def n_steps(cfg: WalkConfig) -> int:
    """Number of increments; a trajectory has ``n_steps + 1`` states."""
    # guard against 0.3/0.1 = 2.9999999999999996 style rounding
    return int(math.ceil(cfg.t_max / cfg.dt - 1e-9)) if cfg.t_max > 0 else 0


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(block)]))


def initial_params(n: int, rng: np.random.Generator, size: int | None = None) -> BoxOneParams:
    """Identity start: unit diagonal, zero last phase.

    The off-diagonal phases do not affect the identity matrix (their
    magnitudes vanish) and are drawn uniformly.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    batch = () if size is None else (size,)
    off = TWO_PI * rng.random(batch + (n - 1, n - 1))
    return BoxOneParams(n, np.ones(batch + (n - 1,), dtype=complex), off, np.zeros(batch))


def reflect_into_disk(z: np.ndarray) -> np.ndarray:
    """Radially fold points back into the closed unit disk."""
    z = np.array(z, dtype=complex)
    r = np.abs(z)
    out = r > 1
    while np.any(out):
        rr = r[out]
        # r in (1, 2]: r -> 2 - r; beyond 2 the point passes through the origin
        z[out] = z[out] * ((2.0 - rr) / rr)
        r = np.abs(z)
        out = r > 1
    return z


def _step_arrays(diag, off, last, s: float, rng: np.random.Generator):
    batch = last.shape
    dz = s * (rng.standard_normal(diag.shape) + 1j * rng.standard_normal(diag.shape))
    diag = reflect_into_disk(diag + dz)
    off = np.mod(off + s * rng.standard_normal(off.shape), TWO_PI)
    last = np.mod(last + s * rng.standard_normal(batch), TWO_PI)
    # mod can round up to exactly 2 pi
    off = np.where(off >= TWO_PI, 0.0, off)
    last = np.where(last >= TWO_PI, 0.0, last)
    return diag, off, last


def step(params: BoxOneParams, cfg: WalkConfig, rng: np.random.Generator) -> BoxOneParams:
    """Advance every independent parameter by one Gaussian increment."""
    s = cfg.sigma * math.sqrt(cfg.dt)
    if s == 0:
        return params
    diag, off, last = _step_arrays(params.diag, params.offdiag_phases,
                                   params.last_diag_phase, s, rng)
    return BoxOneParams(params.dim, diag, off, last)


@dataclass(frozen=True)
class WalkTrajectory:
    """States of one walk at ``times``; ``matrices`` is ``None`` unless materialized."""

    times: np.ndarray
    states: BoxOneParams
    config: WalkConfig
    matrices: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.times.size

    def state(self, i: int) -> BoxOneParams:
        return self.states[i]

    def realized(self, i: int) -> RealizedUnitary:
        return realize(self.states[i])


def run_walk(n: int, cfg: WalkConfig, materialize: bool = False) -> WalkTrajectory:
    """Simulate one walk from the identity; deterministic given ``cfg.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed)))
    steps = n_steps(cfg)
    p = initial_params(n, rng)
    diag = np.empty((steps + 1, n - 1), dtype=complex)
    off = np.empty((steps + 1, n - 1, n - 1))
    last = np.empty(steps + 1)
    d, o, la = p.diag, p.offdiag_phases, p.last_diag_phase
    s = cfg.sigma * math.sqrt(cfg.dt)
    for i in range(steps + 1):
        if i and s > 0:
            d, o, la = _step_arrays(d, o, la, s, rng)
        diag[i], off[i], last[i] = d, o, la
    states = BoxOneParams(n, diag, off, last)
    times = cfg.dt * np.arange(steps + 1)
    mats = None
    if materialize:
        mats, failed = realize_matrices(states)
        if failed.any():
            i = int(np.argmax(failed))
            try:
                realize(states[i])
            except ConstructionError as exc:
                raise WalkError(i, exc) from exc
    return WalkTrajectory(times, states, cfg, mats)


def trajectory_columns(n: int, with_matrix: bool) -> list[str]:
    """Column order of the trajectory CSV.

    ``t``; ``diag{k}_re, diag{k}_im`` for ``k = 1..N-1``; ``phase{i}_{j}``
    for rows ``i = 1..N-1`` and columns ``j != i``; ``phase{N}_{N}``; then,
    if matrices are included, ``U{r}_{c}_re, U{r}_{c}_im`` row-major.
    """
    cols = ["t"]
    for k in range(1, n):
        cols += [f"diag{k}_re", f"diag{k}_im"]
    for i in range(1, n):
        cols += [f"phase{i}_{j}" for j in range(1, n + 1) if j != i]
    cols.append(f"phase{n}_{n}")
    if with_matrix:
        for r in range(1, n + 1):
            for c in range(1, n + 1):
                cols += [f"U{r}_{c}_re", f"U{r}_{c}_im"]
    return cols


def write_trajectory_csv(traj: WalkTrajectory, path: str | Path) -> None:
    n = traj.states.dim
    with_matrix = traj.matrices is not None
    vec = traj.states.as_vector()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_columns(n, with_matrix))
        for i, t in enumerate(traj.times):
            row = [repr(float(t))] + [repr(float(x)) for x in vec[i]]
            if with_matrix:
                m = traj.matrices[i].ravel()
                row += [repr(float(x)) for z in m for x in (z.real, z.imag)]
            w.writerow(row)

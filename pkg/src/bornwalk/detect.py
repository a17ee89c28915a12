"""Tolerance-based detection of eigenstate generators.

A unitary ``U`` is an eigenstate generator for row ``k`` when that row
equals ``exp(i theta) conj(c0)``: then ``U c0`` is ``exp(i theta)`` times
the ``k``-th basis vector.  With a finite tolerance ``eps`` the row test
is done element by element in the complex plane:

* the diagonal entry must lie in the ring ``| |U_kk| - |c0_k| | <= eps/2``,
  which fixes ``theta = arg(U_kk) + arg(c0_k)``;
* every other entry must lie in the disk of diameter ``eps`` around
  ``exp(i theta) conj(c0_j)``.

The cheaper amplitude criterion accepts row ``k`` when
``|(U c0)_k|**2 >= 1 - eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

__all__ = [
    "DetectionConfig",
    "DetectionOutcome",
    "match_row",
    "detect",
    "row_acceptance",
    "first_accepted",
]

Criterion = Literal["row-geometric", "amplitude"]
ZeroPolicy = Literal["reject", "reduce"]


@dataclass(frozen=True)
class DetectionConfig:
    """Detection tolerance and criterion.

    ``per_eigenstate_epsilon`` overrides ``epsilon`` row by row (biased
    measurement); ``zero_policy`` decides what happens when ``c0`` has zero
    components: ``"reject"`` never accepts, ``"reduce"`` drops them and
    works in the reduced dimension.
    """

    epsilon: float
    criterion: Criterion = "row-geometric"
    per_eigenstate_epsilon: tuple[float, ...] | None = None
    zero_policy: ZeroPolicy = "reject"

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.criterion not in ("row-geometric", "amplitude"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.zero_policy not in ("reject", "reduce"):
            raise ValueError(f"unknown zero policy {self.zero_policy!r}")
        if self.per_eigenstate_epsilon is not None:
            eps = tuple(float(e) for e in self.per_eigenstate_epsilon)
            if any(e <= 0 for e in eps):
                raise ValueError("per-eigenstate epsilons must be positive")
            object.__setattr__(self, "per_eigenstate_epsilon", eps)

    def eps_vector(self, n: int) -> np.ndarray:
        if self.per_eigenstate_epsilon is None:
            return np.full(n, self.epsilon)
        if len(self.per_eigenstate_epsilon) != n:
            raise ValueError("per_eigenstate_epsilon length must equal N")
        return np.asarray(self.per_eigenstate_epsilon)


@dataclass(frozen=True)
class DetectionOutcome:
    hit: int | None
    theta: float | None
    residuals: np.ndarray = field(repr=False)


ZERO_AMPLITUDE = 1e-15


def _row_residuals(U: np.ndarray, c0: np.ndarray):
    """Per-row worst element distances and slaved phases (batched over leading axes).

    Returns ``(ring, offdiag, theta)``: the diagonal ring distance, the
    largest off-diagonal distance, and ``theta`` for every row.
    """
    n = c0.size
    mag = np.abs(c0)
    diag = np.diagonal(U, axis1=-2, axis2=-1)
    theta = np.angle(diag) + np.angle(c0)
    ring = np.abs(np.abs(diag) - mag)
    target = np.exp(1j * theta)[..., :, None] * np.conj(c0)
    dist = np.abs(U - target)
    dist[..., np.arange(n), np.arange(n)] = 0.0
    return ring, dist.max(axis=-1), theta


def row_acceptance(U: np.ndarray, c0, cfg: DetectionConfig) -> np.ndarray:
    """Boolean mask of accepted rows, shape ``batch + (N,)``.

    Zero components of ``c0`` follow ``cfg.zero_policy``.
    """
    c0 = np.asarray(c0, dtype=complex)
    U = np.asarray(U, dtype=complex)
    n = c0.size
    support = np.abs(c0) > ZERO_AMPLITUDE
    if not support.all():
        out = np.zeros(U.shape[:-1], dtype=bool)
        if cfg.zero_policy == "reject":
            return out
        sub = np.ix_(support, support)
        red = DetectionConfig(cfg.epsilon, cfg.criterion,
                              None if cfg.per_eigenstate_epsilon is None
                              else tuple(np.asarray(cfg.per_eigenstate_epsilon)[support]))
        out[..., support] = row_acceptance(U[(...,) + sub], c0[support], red)
        return out
    eps = cfg.eps_vector(n)
    if cfg.criterion == "amplitude":
        amp = np.abs(U @ c0) ** 2
        return amp >= 1 - eps
    ring, off, _ = _row_residuals(U, c0)
    return (ring <= eps / 2) & (off <= eps / 2)


def first_accepted(mask: np.ndarray) -> np.ndarray:
    """Lowest accepted row index per batch entry, ``-1`` when none."""
    any_hit = mask.any(axis=-1)
    return np.where(any_hit, np.argmax(mask, axis=-1), -1)


def match_row(U, k: int, c0, eps: float) -> float | None:
    """Test row ``k`` of ``U`` against the generator row ``exp(i theta) conj(c0)``.

    Returns ``theta`` on acceptance, ``None`` otherwise.  A ``c0`` with a
    zero component is rejected outright (use :func:`detect` with
    ``zero_policy="reduce"`` to drop such components).
    """
    c0 = np.asarray(c0, dtype=complex)
    U = np.asarray(U, dtype=complex)
    if np.any(np.abs(c0) <= ZERO_AMPLITUDE):
        return None
    ring, off, theta = _row_residuals(U, c0)
    if ring[k] <= eps / 2 and off[k] <= eps / 2:
        return float(np.mod(theta[k], 2 * np.pi))
    return None


def detect(U, c0, cfg: DetectionConfig) -> DetectionOutcome:
    """Scan rows in order; the first accepted row is the detected eigenstate."""
    c0 = np.asarray(c0, dtype=complex)
    U = np.asarray(U, dtype=complex)
    mask = row_acceptance(U, c0, cfg)
    hit = int(first_accepted(mask))
    support = np.abs(c0) > ZERO_AMPLITUDE
    if cfg.criterion == "amplitude":
        residuals = 1 - np.abs(U @ c0) ** 2
    elif support.all():
        ring, off, _ = _row_residuals(U, c0)
        residuals = np.maximum(ring, off)
    else:
        residuals = np.full(c0.size, np.nan)
    if hit < 0:
        return DetectionOutcome(None, None, residuals)
    if cfg.criterion == "amplitude":
        theta = np.angle(U[hit] @ c0)
    else:
        theta = np.angle(U[hit, hit]) + np.angle(c0[hit])
    return DetectionOutcome(hit, float(np.mod(theta, 2 * np.pi)), residuals)

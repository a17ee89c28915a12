"""Independent closed-form and quadrature oracles used by the tests."""

import numpy as np
from scipy import integrate


def circle_hit_fraction(rho, r, h):
    """Fraction of a uniform phase on the circle of radius ``rho`` that lies
    within distance ``h`` of a fixed point at distance ``r`` from the origin."""
    if rho <= 0 or r <= 0:
        return 1.0 if abs(rho - r) <= h else 0.0
    c = (rho * rho + r * r - h * h) / (2 * rho * r)
    return float(np.arccos(np.clip(c, -1.0, 1.0)) / np.pi)


def n2_row_match_probability(target_diag, target_off, eps):
    """P(row matches) for N = 2 stationary samples.

    The diagonal magnitude ``a`` has density ``2a`` on ``[0, 1]`` and the
    off-diagonal entry has magnitude ``sqrt(1 - a^2)`` and a uniform phase
    independent of everything else.
    """
    h = eps / 2
    lo, hi = max(0.0, target_diag - h), min(1.0, target_diag + h)
    f = lambda a: 2 * a * circle_hit_fraction(np.sqrt(max(1 - a * a, 0.0)), target_off, h)
    val, _ = integrate.quad(f, lo, hi, limit=200, epsabs=1e-14)
    return val

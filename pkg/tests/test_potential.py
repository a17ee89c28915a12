import numpy as np
import pytest

from bornwalk.linalg import BranchCutError, expm_hermitian, hermiticity_defect
from bornwalk.potential import (potential_stats, propagate, propagate_matrix,
                                reconstruct_from_matrices, reconstruct_potential)
from bornwalk.walk import WalkConfig, run_walk


@pytest.mark.parametrize("n", [2, 3])
def test_round_trip_walk(n):
    traj = run_walk(n, WalkConfig(t_max=10.0, seed=n), materialize=True)
    series = reconstruct_potential(traj)
    assert len(series) == len(traj) - 1
    assert np.max(hermiticity_defect(series.generators)) <= 1e-12
    np.testing.assert_allclose(propagate_matrix(series), traj.matrices[-1], atol=1e-9)
    c0 = np.sqrt([0.8, 0.2] if n == 2 else [0.5, 0.3, 0.2]).astype(complex)
    np.testing.assert_allclose(propagate(c0, series), traj.matrices[-1] @ c0, atol=1e-9)


def test_constant_generator_recovered():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    V0 = (a + a.conj().T) / 4
    dt = 0.02
    mats = np.stack([expm_hermitian(V0, k * dt) for k in range(20)])
    series = reconstruct_from_matrices(mats, dt)
    np.testing.assert_allclose(series.generators, np.broadcast_to(V0, (19, 3, 3)), atol=1e-10)
    stats = potential_stats(series)
    assert stats["steps"] == 19
    assert stats["flagged_steps"] == []


def test_requires_materialized():
    with pytest.raises(ValueError):
        reconstruct_potential(run_walk(2, WalkConfig(t_max=0.1)))


def test_branch_cut_reports_step():
    mats = np.stack([np.eye(2), np.eye(2), np.diag([1.0, -1.0])])
    with pytest.raises(BranchCutError, match="step 1"):
        reconstruct_from_matrices(mats, 0.1)


def test_empty_series():
    series = reconstruct_from_matrices(np.eye(2)[None], 0.1)
    assert len(series) == 0
    assert potential_stats(series) == {"steps": 0}

import functools

import numpy as np
import pytest

from qlighthill.cli import resolve_config
from qlighthill.gpe import NO_POTENTIAL, PhysicsParams, evolve, initialize_state
from qlighthill.grid import make_grid
from qlighthill.runner import check_indices, ladder_runs, run_gpe

LADDER = (64, 128, 256)


@functools.lru_cache(maxsize=None)
def scenario_ladder(name: str):
    """``(trajectory, index)`` per level of the standard refinement ladder (cached)."""
    return [(traj, i) for traj, i, _ in ladder_runs(resolve_config(name), LADDER)]


@functools.lru_cache(maxsize=None)
def scenario_trajectory(name: str, points: int | None = None):
    """A bundled scenario's trajectory and a central check slice.

    With ``points`` the run is taken from the refinement ladder.
    """
    if points is not None:
        return scenario_ladder(name)[LADDER.index(points)]
    cfg = resolve_config(name)
    traj = run_gpe(cfg)
    idx = check_indices(cfg, traj)
    return traj, idx[len(idx) // 2]


@functools.lru_cache(maxsize=None)
def plane_wave_trajectory():
    g = make_grid(1, [2 * np.pi], [32], [0.0])
    p = PhysicsParams()
    psi = initialize_state(g, "plane_wave", p, k=2)
    return evolve(psi, g, NO_POTENTIAL, p, 0.05, 1e-3), 3


@pytest.fixture
def plane_wave():
    return plane_wave_trajectory()

"""Closed-loop quality metrics.

Both metrics average over the samples strictly after the initial record
(the initial condition is given, not chosen by the controller) and return
0.0 for a single-record trajectory.
"""

from __future__ import annotations

import numpy as np

from .plant import Trajectory

__all__ = ["constraint_violation", "control_error"]


def constraint_violation(traj: Trajectory, z_min, z_max) -> float:
    """Mean componentwise box violation of z = (x, u):
    mean over samples of sum_c [max(z_c - z_max_c, 0) + max(z_min_c - z_c, 0)]."""
    if traj.times.size == 0:
        raise ValueError("empty trajectory")
    z = traj.z[1:]
    if z.shape[0] == 0:
        return 0.0
    z_min = np.asarray(z_min, dtype=float)
    z_max = np.asarray(z_max, dtype=float)
    over = np.maximum(z - z_max, 0.0)
    under = np.maximum(z_min - z, 0.0)
    return float(np.sum(over + under) / z.shape[0])


def control_error(traj: Trajectory, x_ref) -> float:
    """Mean squared distance of the state from the reference:
    mean over samples of ||x - x_ref||^2."""
    if traj.times.size == 0:
        raise ValueError("empty trajectory")
    x = traj.states[1:]
    if x.shape[0] == 0:
        return 0.0
    diff = x - np.asarray(x_ref, dtype=float)
    return float(np.sum(diff * diff) / x.shape[0])

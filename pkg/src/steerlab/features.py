"""The three robot-frame input encodings fed to the neural controllers.

All of them describe the upcoming reference relative to the vehicle, so a
rigid transform of the whole scene leaves them unchanged:

  i3   closest reference point (x, y) + relative reference heading
  i21  lateral (y) components of the next N reference points + heading
  i40  full (x, y) of the next N reference points, interleaved
"""

import numpy as np

from . import kernels
from .trajgen import RefTrajectory
from .vehicle import VehicleState

HORIZON = 20  # reference points per encoding; fixed by the i21/i40 names

FEATURE_DIMS = {"i3": 3, "i21": HORIZON + 1, "i40": 2 * HORIZON}


def _check_index(traj: RefTrajectory, k: int, horizon: int) -> int:
    last = traj.last_usable_index(horizon)
    if last < 0:
        raise ValueError("trajectory shorter than the horizon")
    if k < 0:
        raise ValueError("negative waypoint index")
    return min(k, last)  # saturate at the trajectory end


def build_i3(state: VehicleState, traj: RefTrajectory, k: int) -> np.ndarray:
    k = _check_index(traj, k, HORIZON)
    out = np.empty(3)
    kernels.features_i3(
        state.x, state.y, state.theta, traj.points, traj.headings, k, out
    )
    return out


def build_i21(state: VehicleState, traj: RefTrajectory, k: int, horizon: int = HORIZON) -> np.ndarray:
    k = _check_index(traj, k, horizon)
    out = np.empty(horizon + 1)
    kernels.features_i21(
        state.x, state.y, state.theta, traj.points, traj.headings, k, horizon, out
    )
    return out


def build_i40(state: VehicleState, traj: RefTrajectory, k: int, horizon: int = HORIZON) -> np.ndarray:
    k = _check_index(traj, k, horizon)
    out = np.empty(2 * horizon)
    kernels.features_i40(state.x, state.y, state.theta, traj.points, k, horizon, out)
    return out


_BUILDERS = {"i3": build_i3, "i21": build_i21, "i40": build_i40}


def build_features(kind: str, state: VehicleState, traj: RefTrajectory, k: int, horizon: int = HORIZON) -> np.ndarray:
    if kind not in _BUILDERS:
        raise ValueError(f"unknown feature kind {kind!r} (expected i3/i21/i40)")
    if kind == "i3":
        return build_i3(state, traj, k)
    return _BUILDERS[kind](state, traj, k, horizon)

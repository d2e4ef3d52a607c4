import numpy as np
import pytest

from steerlab.mpc import MpcConfig
from steerlab.vehicle import VehicleParams


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


@pytest.fixture(scope="session")
def mcfg(params):
    return MpcConfig(delta_max=params.delta_max)


@pytest.fixture(scope="session")
def track(params):
    from steerlab.trajgen import build_validation_track

    return build_validation_track(params)


def arc_refs(kappa, n, spacing, x0=0.0, y0=0.0, th0=0.0):
    """Constant-curvature reference points, one vehicle step apart."""
    pts = np.empty((n, 2))
    x, y, th = x0, y0, th0
    for i in range(n):
        x += spacing * np.cos(th)
        y += spacing * np.sin(th)
        th += spacing * kappa
        pts[i] = (x, y)
    return pts

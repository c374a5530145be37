import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from maskrecon.models import Intrinsics  # noqa: E402
from maskrecon.services.geometry import relative_pose  # noqa: E402
from maskrecon.services.synth import preset, render_pair  # noqa: E402


class Rendered:
    """A preset with its rendered pair and the frame-t -> frame t-1 motion."""

    def __init__(self, name: str):
        self.preset = preset(name)
        self.intr = self.preset.intrinsics
        self.x_tm1, self.d_tm1, self.x_t, self.d_t = render_pair(self.preset)
        self.pose = relative_pose(self.preset.pose_tm1, self.preset.pose_t)


@pytest.fixture(scope="session")
def rendered():
    cache = {}

    def get(name: str) -> Rendered:
        if name not in cache:
            cache[name] = Rendered(name)
        return cache[name]

    return get


@pytest.fixture
def small_intr():
    return Intrinsics(fx=20.0, fy=20.0, cx=8.0, cy=8.0, width=16, height=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

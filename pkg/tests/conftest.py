import math

import numpy as np
import pytest

from masklift.geometry import BevRect
from masklift.scene_io import Cuboid


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_rect(rng, span=10.0):
    return BevRect(
        center_x=float(rng.uniform(-span, span)),
        center_y=float(rng.uniform(-span, span)),
        width=float(rng.uniform(0.3, 6.0)),
        length=float(rng.uniform(0.3, 10.0)),
        yaw=float(rng.uniform(-math.pi, math.pi)),
    )


def random_cuboid(rng, frame_id="f0", class_label="car", span=20.0,
                  source="cm3d", with_velocity=False):
    score = float(rng.uniform(0.0, 1.0))
    return Cuboid(
        frame_id=frame_id,
        class_label=class_label,
        score=score,
        center=(float(rng.uniform(-span, span)),
                float(rng.uniform(-span, span)),
                float(rng.uniform(-2.0, 2.0))),
        dims=(float(rng.uniform(0.3, 3.0)), float(rng.uniform(0.3, 6.0)),
              float(rng.uniform(0.3, 3.0))),
        yaw=float(rng.uniform(-math.pi, math.pi - 1e-9)),
        velocity=((float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5)))
                  if with_velocity else None),
        source=source,
    )

"""Frozen class list, per-class shape priors, and per-class constants.

The shape priors are a fixed lookup table (width, length, height in meters)
used whenever a cuboid must be emitted for a class whose extent cannot be
measured from points alone. They are configuration, not estimates derived
from data at runtime, and tests pin them verbatim.
"""

CLASSES = (
    "car",
    "truck",
    "bus",
    "trailer",
    "construction_vehicle",
    "pedestrian",
    "motorcycle",
    "bicycle",
    "traffic_cone",
    "barrier",
)

# class -> (width, length, height), meters
SHAPE_PRIORS = {
    "car": (1.80, 4.50, 1.50),
    "truck": (2.60, 8.00, 3.60),
    "bus": (2.50, 12.00, 4.00),
    "trailer": (2.60, 12.00, 3.60),
    "construction_vehicle": (2.00, 4.50, 2.50),
    "pedestrian": (0.40, 0.70, 1.70),
    "motorcycle": (0.80, 2.10, 1.70),
    "bicycle": (0.60, 1.80, 1.40),
    "traffic_cone": (0.30, 0.30, 0.70),
    "barrier": (0.50, 1.20, 0.90),
}

# classes whose heading is taken from the nearest lane centerline
VEHICLE_CLASSES = frozenset({
    "car",
    "truck",
    "bus",
    "trailer",
    "construction_vehicle",
    "motorcycle",
    "bicycle",
})

# class -> BEV center-distance radius (meters) for 3D duplicate suppression
NMS3D_THRESHOLDS = {
    "car": 4.0,
    "truck": 4.0,
    "bus": 4.0,
    "trailer": 4.0,
    "construction_vehicle": 4.0,
    "motorcycle": 1.0,
    "bicycle": 1.0,
    "pedestrian": 0.5,
    "traffic_cone": 0.5,
    "barrier": 0.5,
}

# class -> yaw period (radians) for orientation error; classes absent from
# this map use a full turn
YAW_PERIODS = {
    "barrier": 3.141592653589793,
}

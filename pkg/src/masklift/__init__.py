"""masklift: 2D instance masks + LiDAR -> oriented 3D cuboid pseudo-labels,
with late fusion, detection metrics, and a synthetic-scene oracle."""

__version__ = "0.1.0"

from .fusion import FusionConfig, fuse
from .metrics import EvalConfig, evaluate
from .pseudolabel import PipelineConfig, generate_frame, generate_scene
from .scene_io import Cuboid, load_bundle, read_cuboids, write_cuboids
from .synth import SynthConfig, generate_bundle, make_mask_noise

__all__ = [
    "__version__",
    "Cuboid",
    "EvalConfig",
    "FusionConfig",
    "PipelineConfig",
    "SynthConfig",
    "evaluate",
    "fuse",
    "generate_bundle",
    "generate_frame",
    "generate_scene",
    "load_bundle",
    "make_mask_noise",
    "read_cuboids",
    "write_cuboids",
]

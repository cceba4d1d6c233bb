"""Hot numeric kernels, compiled when available.

The compiled extension is optional: if the build was skipped or the wheel
has no extension for this platform, the pure-Python implementations in
_reference take over with identical semantics. BACKEND names the active
implementation ("compiled" or "python"); force_backend() exists for tests
and benchmarks.
"""

try:
    from . import _core as _impl
    BACKEND = "compiled"
except ImportError:
    from . import _reference as _impl
    BACKEND = "python"

from . import _reference

medoid_index = _impl.medoid_index
rect_intersection_area = _impl.rect_intersection_area


def force_backend(name):
    """Swap the module-level kernel bindings. Returns the previous name."""
    global medoid_index, rect_intersection_area, BACKEND
    previous = BACKEND
    if name == "python":
        mod = _reference
    elif name == "compiled":
        from . import _core as mod
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    medoid_index = mod.medoid_index
    rect_intersection_area = mod.rect_intersection_area
    BACKEND = name
    return previous

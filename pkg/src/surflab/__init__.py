"""surflab: desk-scale numerical laboratory for excess decay and
center-manifold interpolation of area-minimizing graphs."""

from .params import Params

__version__ = "0.1.0"

__all__ = ["Params", "__version__"]

"""Content/context factorization of frame-level speech representations."""

from .autodiff import Graph, Node, NumericalError, ShapeError, ValidationError
from .config import RunConfig

__all__ = ["Graph", "Node", "NumericalError", "ShapeError", "ValidationError", "RunConfig"]
__version__ = "0.1.0"

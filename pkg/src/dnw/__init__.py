"""Neural graphs whose wiring is learned: top-k edge training with hallucinated edges."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]

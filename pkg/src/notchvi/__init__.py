"""Finite element solver for quasilinear variational inequalities on thin notched beams,
together with the discrete 1-D and junction limit problems and an eps-sweep harness."""

from .errors import NotchVIError

__version__ = "0.1.0"
__all__ = ["NotchVIError", "__version__"]

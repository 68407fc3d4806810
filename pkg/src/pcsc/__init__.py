"""Numerical laboratory for prescribed-curvature conformal problems on flat periodic grids."""

__version__ = "0.1.0"

from .grid_fields import OneFormField, ScalarField, TorusGrid
from .hermitian import HermitianBackground, background

__all__ = [
    "OneFormField",
    "ScalarField",
    "TorusGrid",
    "HermitianBackground",
    "background",
    "__version__",
]

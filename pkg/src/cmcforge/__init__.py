"""Symmetric CMC surfaces in S^3 from DPW potentials on a four-punctured sphere."""

__version__ = "0.1.0"

from .model import AccessorySeries, SurfaceParams, lawson_params  # noqa: E402
from .search import FamilySpec, SearchConfig, SolvedRun, continue_family, minimize_surface  # noqa: E402

__all__ = ["AccessorySeries", "SurfaceParams", "lawson_params", "SearchConfig", "SolvedRun",
           "FamilySpec", "minimize_surface", "continue_family", "__version__"]

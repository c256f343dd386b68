"""Simulation, estimation and AIC selection for stochastic growth models."""
__version__ = "0.1.0"

from .models import DomainError, ModelKind, ModelSpec  # noqa: E402
from .simulate import ObservationSet, Path, RngStream, TimeGrid  # noqa: E402

__all__ = ["DomainError", "ModelKind", "ModelSpec", "ObservationSet", "Path", "RngStream",
           "TimeGrid", "__version__"]

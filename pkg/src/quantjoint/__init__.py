"""Bayesian quantile joint models for longitudinal and event-time data."""

__version__ = "0.1.0"

from .ald import QuantileLevel  # noqa: E402
from .model import (  # noqa: E402
    HazardGrid,
    JointDataset,
    McmcSettings,
    ModelSpec,
    PriorSpec,
    read_dataset,
)

__all__ = [
    "HazardGrid",
    "JointDataset",
    "McmcSettings",
    "ModelSpec",
    "PriorSpec",
    "QuantileLevel",
    "__version__",
    "read_dataset",
]

"""Mobility-aware federated caching for dense small-cell networks."""

from .core import (
    CacheMatrix,
    ConfigError,
    ContentCatalog,
    CostParams,
    DivergenceError,
    MobilitySample,
    NetworkTopology,
    OutOfRegionError,
    RequestEvent,
    TraceError,
    assign_cell,
    occupancy,
)
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

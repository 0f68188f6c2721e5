"""Hardware-aware neural architecture, quantization and FPGA allocation co-search."""

__version__ = "0.1.0"

from .allocator import AllocationProblem, AllocationSolution, solve
from .arch import Architecture, LayerSpec, QuantScheme, SubgraphTemplate, depthwise, full, group_layers, validate
from .exceptions import (
    BadProfile,
    DegenerateDataWarning,
    DegenerateFit,
    DimensionMismatch,
    EmptyPool,
    GroupingError,
    Infeasible,
    InvalidAllocation,
    TooManyLayers,
)
from .latency import Calibration, fit_calibration, network_latency
from .resources import HardwareBudget, KernelAllocation, MapTarget, load_budget

__all__ = [
    "AllocationProblem",
    "AllocationSolution",
    "Architecture",
    "BadProfile",
    "Calibration",
    "DegenerateDataWarning",
    "DegenerateFit",
    "DimensionMismatch",
    "EmptyPool",
    "GroupingError",
    "HardwareBudget",
    "Infeasible",
    "InvalidAllocation",
    "KernelAllocation",
    "LayerSpec",
    "MapTarget",
    "QuantScheme",
    "SubgraphTemplate",
    "TooManyLayers",
    "depthwise",
    "fit_calibration",
    "full",
    "group_layers",
    "load_budget",
    "network_latency",
    "solve",
    "validate",
]

"""Cycle-level latency model for the subgraph dataflow accelerator.

Within one accelerator invocation the kernels run as a pipeline, so a
subgraph costs the slowest of its stages (activation load, each layer's
compute, activation store) plus the weight preloads, which are not hidden.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arch import Architecture, Layer, QuantScheme, SubgraphInstance, group_layers
from .exceptions import DegenerateFit
from .resources import HardwareBudget, KernelAllocation


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def layer_compute_cycles(layer: Layer, alloc: KernelAllocation) -> int:
    """Compute cycles of a layer on its kernel; H and W are the output size."""
    if layer.skipped:
        return 0
    hw = layer.out_h * layer.out_w
    if layer.kernel.is_depthwise:
        return hw * ceil_div(layer.in_ch, alloc.po)
    return hw * ceil_div(layer.in_ch, alloc.pi) * ceil_div(layer.out_ch, alloc.po)


def activation_transfer_cycles(h: int, w: int, ch: int, q_a: int, bw: int) -> int:
    return ceil_div(h * w * ch * q_a, bw)


def weight_load_cycles(layer: Layer, q_w: int, bw: int) -> int:
    if layer.skipped:
        return 0
    return ceil_div(layer.n_weights * q_w, bw)


def combine_subgraph(lat_on: int, compute: Sequence[int], lat_off: int, weight_load: Sequence[int]) -> int:
    """Pipelined subgraph latency: the slowest stage plus all weight preloads."""
    return max([lat_on, lat_off, *compute]) + sum(weight_load)


@dataclass(frozen=True)
class SubgraphLatency:
    lat_on: int
    compute: tuple[int, ...]
    lat_off: int
    weight_load: tuple[int, ...]
    total: int

    def to_dict(self) -> dict:
        return {
            "lat_on": self.lat_on,
            "compute": list(self.compute),
            "lat_off": self.lat_off,
            "weight_load": list(self.weight_load),
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubgraphLatency":
        return cls(int(d["lat_on"]), tuple(d["compute"]), int(d["lat_off"]), tuple(d["weight_load"]), int(d["total"]))


@dataclass(frozen=True)
class Calibration:
    """Affine map from model latency to measured milliseconds."""

    slope: float
    intercept: float
    r: float = float("nan")

    def __post_init__(self):
        if not self.slope > 0:
            raise ValueError(f"calibration slope must be positive, got {self.slope}")

    def apply(self, x):
        return self.slope * x + self.intercept

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r": self.r}

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        return cls(float(d["slope"]), float(d["intercept"]), float(d.get("r", float("nan"))))


@dataclass(frozen=True)
class LatencyReport:
    per_subgraph: tuple[SubgraphLatency, ...]
    total_cycles: int
    calibrated_ms: float | None = None

    def to_dict(self) -> dict:
        d = {
            "total_cycles": self.total_cycles,
            "per_subgraph": [s.to_dict() for s in self.per_subgraph],
        }
        if self.calibrated_ms is not None:
            d["calibrated_ms"] = self.calibrated_ms
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyReport":
        subs = tuple(SubgraphLatency.from_dict(x) for x in d.get("per_subgraph", ()))
        return cls(subs, int(d["total_cycles"]), d.get("calibrated_ms"))


def subgraph_latency(
    instance: SubgraphInstance,
    arch: Architecture,
    quant: QuantScheme,
    allocs: Sequence[KernelAllocation],
    bw: int,
) -> SubgraphLatency:
    active = instance.active()
    if not active:
        return SubgraphLatency(0, (), 0, (), 0)
    j0, i0 = active[0]
    jn, iN = active[-1]
    first, last = arch.layers[i0], arch.layers[iN]
    lat_on = activation_transfer_cycles(first.in_h, first.in_w, first.in_ch, quant.per_kernel[j0][0], bw)
    lat_off = activation_transfer_cycles(last.out_h, last.out_w, last.out_ch, quant.per_kernel[jn][0], bw)
    compute = tuple(layer_compute_cycles(arch.layers[i], allocs[j]) for j, i in active)
    weights = tuple(weight_load_cycles(arch.layers[i], quant.per_kernel[j][1], bw) for j, i in active)
    return SubgraphLatency(lat_on, compute, lat_off, weights, combine_subgraph(lat_on, compute, lat_off, weights))


def subgraph_cycles(instance, arch, quant, allocs, bw: int) -> int:
    return subgraph_latency(instance, arch, quant, allocs, bw).total


def cycles_to_ms(cycles: int, clock_mhz: float) -> float:
    return cycles / (clock_mhz * 1e3)


def network_latency(
    arch: Architecture,
    quant: QuantScheme,
    allocs: Sequence[KernelAllocation],
    budget: HardwareBudget,
    calibration: Calibration | None = None,
    instances=None,
) -> LatencyReport:
    """Total latency of the network under a fixed allocation.

    With a calibration the report also carries ``calibrated_ms``, obtained
    by applying the affine fit to the uncalibrated milliseconds at
    ``budget.clock_mhz``.
    """
    if instances is None:
        instances = group_layers(arch)
    subs = tuple(subgraph_latency(inst, arch, quant, allocs, budget.bw) for inst in instances)
    total = sum(s.total for s in subs)
    ms = None
    if calibration is not None:
        ms = float(calibration.apply(cycles_to_ms(total, budget.clock_mhz)))
    return LatencyReport(subs, total, ms)


def fit_calibration(pairs) -> Calibration:
    """Ordinary least-squares fit of ``measured = slope * predicted + intercept``.

    Returns the fit with the Pearson correlation of the pairs in ``r``.
    """
    data = np.asarray(pairs, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DegenerateFit("need at least two (predicted, measured) pairs")
    x, y = data[:, 0], data[:, 1]
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateFit("all predicted values are equal")
    dy = y - y.mean()
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean() - slope * x.mean())
    syy = float(dy @ dy)
    r = float(dx @ dy) / math.sqrt(sxx * syy) if syy > 0 else float("nan")
    return Calibration(slope, intercept, r)

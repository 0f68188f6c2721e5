"""Per-kernel parallelism and DSP/LUT mapping that minimizes network latency.

The search space is ``{parallelism_set^2 x {DSP, LUT}}^M``. Each kernel's
options are reduced to a dominance-free set (an option is dropped when
another one needs no more of every resource and is no slower on every
subgraph instance), then a depth-first branch-and-bound walks the kernels
with resource and latency lower bounds. The result is exact, including the
tie-break order ``(latency, DSP, LUT, BRAM, (pi, po, map) list)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .arch import Architecture, QuantScheme, group_layers
from .exceptions import Infeasible
from .latency import LatencyReport, activation_transfer_cycles, network_latency, weight_load_cycles
from .resources import (
    HardwareBudget,
    KernelAllocation,
    MapTarget,
    ResourceReport,
    default_pf,
    kernel_resources,
    network_buffer_sizes,
)

DEFAULT_PARALLELISM = (1, 2, 4, 8, 16, 32, 64)
_MAP_ORDER = {MapTarget.DSP: 0, MapTarget.LUT: 1}


@dataclass(frozen=True)
class AllocationProblem:
    arch: Architecture
    quant: QuantScheme
    budget: HardwareBudget
    parallelism_set: tuple[int, ...] = DEFAULT_PARALLELISM
    mappings: tuple[MapTarget, ...] = (MapTarget.DSP, MapTarget.LUT)
    include_quant_unit: bool = True

    def __post_init__(self):
        ps = tuple(int(p) for p in self.parallelism_set)
        if not ps:
            raise ValueError("parallelism_set must not be empty")
        if list(ps) != sorted(set(ps)) or ps[0] < 1:
            raise ValueError("parallelism_set must be strictly ascending positive integers")
        object.__setattr__(self, "parallelism_set", ps)
        object.__setattr__(self, "mappings", tuple(MapTarget(m) for m in self.mappings))
        if self.quant.M != self.arch.template.M:
            raise ValueError(f"quant scheme has {self.quant.M} kernels, template has {self.arch.template.M}")


@dataclass(frozen=True)
class AllocationSolution:
    per_kernel: tuple[KernelAllocation, ...]
    resources: ResourceReport
    latency: LatencyReport
    optimal: bool = True

    def to_dict(self) -> dict:
        return {
            "per_kernel": [a.to_dict() for a in self.per_kernel],
            "resources": self.resources.to_dict(),
            "latency": self.latency.to_dict(),
            "optimal": self.optimal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AllocationSolution":
        return cls(
            tuple(KernelAllocation.from_dict(a) for a in d["per_kernel"]),
            ResourceReport.from_dict(d["resources"]),
            LatencyReport.from_dict(d["latency"]),
            bool(d.get("optimal", True)),
        )


@dataclass(frozen=True)
class _Option:
    alloc: KernelAllocation
    res: tuple[int, int, int]
    cycles: np.ndarray  # compute cycles of this kernel on every instance

    @property
    def ident(self):
        return (self.alloc.pi, self.alloc.po, _MAP_ORDER[self.alloc.map_to])


@lru_cache(maxsize=256)
def _compute_tables(arch: Architecture, parallelism_set: tuple[int, ...]):
    """Compute cycles per (slot, pi, po) on every instance; independent of bitwidths."""
    instances = group_layers(arch)
    L = len(instances)
    tables = []
    for j, spec in enumerate(arch.template.kernels):
        hw = np.zeros(L, dtype=np.int64)
        ic = np.zeros(L, dtype=np.int64)
        oc = np.zeros(L, dtype=np.int64)
        for n, inst in enumerate(instances):
            i = inst.slots[j]
            if i is None or inst.skip_mask[j]:
                continue
            layer = arch.layers[i]
            hw[n] = layer.out_h * layer.out_w
            ic[n], oc[n] = layer.in_ch, layer.out_ch
        table = {}
        for po in parallelism_set:
            if spec.is_depthwise:
                table[(1, po)] = hw * (-(-ic // po))
                continue
            for pi in parallelism_set:
                table[(pi, po)] = hw * (-(-ic // pi)) * (-(-oc // po))
        tables.append(table)
    return instances, tables


def _fixed_terms(arch, quant, bw, instances):
    """Per-instance activation transfer floor and summed weight preload cycles."""
    floor = np.zeros(len(instances), dtype=np.int64)
    weights = 0
    for n, inst in enumerate(instances):
        active = inst.active()
        if not active:
            continue
        (j0, i0), (jn, iN) = active[0], active[-1]
        first, last = arch.layers[i0], arch.layers[iN]
        on = activation_transfer_cycles(first.in_h, first.in_w, first.in_ch, quant.per_kernel[j0][0], bw)
        off = activation_transfer_cycles(last.out_h, last.out_w, last.out_ch, quant.per_kernel[jn][0], bw)
        floor[n] = max(on, off)
        weights += sum(weight_load_cycles(arch.layers[i], quant.per_kernel[j][1], bw) for j, i in active)
    return floor, weights


def _kernel_options(problem: AllocationProblem, instances, tables):
    arch, quant, budget = problem.arch, problem.quant, problem.budget
    n_w, oc_max, wc_max = network_buffer_sizes(arch, instances)
    per_kernel = []
    for j, spec in enumerate(arch.template.kernels):
        q_a, q_w = quant.per_kernel[j]
        opts = []
        for (pi, po), cycles in tables[j].items():
            for m in problem.mappings:
                alloc = KernelAllocation(pi, po, m, default_pf(spec, pi, po))
                r = kernel_resources(
                    spec, alloc, (q_a, q_w, quant.q_p, quant.q_s), n_w[j], wc_max, oc_max[j],
                    budget.lut_table, problem.include_quant_unit,
                )
                opts.append(_Option(alloc, r.as_tuple(), cycles))
        opts.sort(key=lambda o: o.ident)
        per_kernel.append(opts)
    return per_kernel


def _prune_dominated(opts: list[_Option]) -> list[_Option]:
    if len(opts) <= 1:
        return opts
    R = np.array([o.res for o in opts], dtype=np.float64)
    V = np.stack([o.cycles for o in opts]) if opts[0].cycles.size else np.zeros((len(opts), 0))
    # le[b, a]: option b needs no more resources and is no slower than a
    le = np.all(R[:, None, :] <= R[None, :, :], axis=2) & np.all(V[:, None, :] <= V[None, :, :], axis=2)
    same_res = np.all(R[:, None, :] == R[None, :, :], axis=2)
    idx = np.arange(len(opts))
    earlier = idx[:, None] < idx[None, :]  # opts are sorted by ident
    dominated = le & (~same_res | earlier)
    np.fill_diagonal(dominated, False)
    keep = ~dominated.any(axis=0)
    return [o for o, k in zip(opts, keep) if k]


def _check_minimum(per_kernel, budget: HardwareBudget):
    mins = np.zeros(3)
    for opts in per_kernel:
        if not opts:
            raise Infeasible("combined", "a kernel has no admissible configuration")
        mins += np.min(np.array([o.res for o in opts], dtype=np.float64), axis=0)
    limits = (budget.t_dsp, budget.lut_limit, budget.t_bram)
    for name, need, cap in zip(("dsp", "luts", "bram"), mins, limits):
        if need > cap:
            raise Infeasible(name, f"minimum configuration needs {int(need)} {name}, budget allows {cap:g}")


def solve(problem: AllocationProblem, max_nodes: int | None = None) -> AllocationSolution:
    """Return the latency-optimal feasible allocation.

    Raises :class:`Infeasible` naming the violated constraint when even the
    cheapest configuration of every kernel exceeds the budget, or
    ``"combined"`` when each resource fits alone but no joint configuration
    does. With ``max_nodes`` the search may stop early; the incumbent is
    returned with ``optimal=False``.
    """
    arch, budget = problem.arch, problem.budget
    instances, tables = _compute_tables(arch, problem.parallelism_set)
    floor, weight_cycles = _fixed_terms(arch, problem.quant, budget.bw, instances)
    per_kernel = _kernel_options(problem, instances, tables)
    _check_minimum(per_kernel, budget)

    limits = np.array([budget.t_dsp, budget.lut_limit, budget.t_bram], dtype=np.float64)
    per_kernel = [[o for o in opts if np.all(np.array(o.res) <= limits)] for opts in per_kernel]
    if any(not opts for opts in per_kernel):
        raise Infeasible("combined", "some kernel has no configuration that fits the budget alone")
    per_kernel = [_prune_dominated(opts) for opts in per_kernel]
    for opts in per_kernel:
        opts.sort(key=lambda o: (int(o.cycles.sum()), o.ident))

    M = len(per_kernel)
    L = len(instances)
    # the search loop works on plain tuples: the vectors are short and numpy
    # call overhead dominates at this size
    cyc = [[tuple(int(c) for c in o.cycles) for o in opts] for opts in per_kernel]
    min_res = [tuple(min(o.res[r] for o in opts) for r in range(3)) for opts in per_kernel]
    min_cyc = [tuple(min(c[n] for c in cs) for n in range(L)) for cs in cyc]
    rest_res = [(0, 0, 0)] * (M + 1)
    rest_cyc = [(0,) * L] * (M + 1)
    for j in range(M - 1, -1, -1):
        rest_res[j] = tuple(a + b for a, b in zip(rest_res[j + 1], min_res[j]))
        rest_cyc[j] = tuple(max(a, b) for a, b in zip(rest_cyc[j + 1], min_cyc[j]))
    lim = (budget.t_dsp, budget.lut_limit, budget.t_bram)

    best_key = None
    best_choice = None
    nodes = 0
    exhausted = True

    def dfs(j, cur, res, chosen):
        nonlocal best_key, best_choice, nodes, exhausted
        if j == M:
            lat = sum(cur) + weight_cycles
            key = (lat, *res, tuple(o.ident for o in chosen))
            if best_key is None or key < best_key:
                best_key, best_choice = key, list(chosen)
            return
        rr, rc = rest_res[j + 1], rest_cyc[j + 1]
        for opt, oc in zip(per_kernel[j], cyc[j]):
            if max_nodes is not None and nodes >= max_nodes and best_key is not None:
                exhausted = False
                return
            nodes += 1
            r = (res[0] + opt.res[0], res[1] + opt.res[1], res[2] + opt.res[2])
            if r[0] + rr[0] > lim[0] or r[1] + rr[1] > lim[1] or r[2] + rr[2] > lim[2]:
                continue
            m = tuple(a if a > b else b for a, b in zip(cur, oc))
            if best_key is not None:
                lb = sum(a if a > b else b for a, b in zip(m, rc)) + weight_cycles
                if lb > best_key[0]:
                    continue
            chosen.append(opt)
            dfs(j + 1, m, r, chosen)
            chosen.pop()

    dfs(0, tuple(int(f) for f in floor), (0, 0, 0), [])
    if best_choice is None:
        raise Infeasible("combined", "no joint configuration satisfies every resource constraint")

    allocs = tuple(o.alloc for o in best_choice)
    latency = network_latency(arch, problem.quant, allocs, budget, instances=instances)
    if latency.total_cycles != best_key[0]:
        raise AssertionError("allocator objective disagrees with the latency model")
    return AllocationSolution(allocs, ResourceReport(*best_key[1:4]), latency, optimal=exhausted)


def solve_for(arch, quant, budget, parallelism_set: Sequence[int] = DEFAULT_PARALLELISM, **kw) -> AllocationSolution:
    return solve(AllocationProblem(arch, quant, budget, tuple(parallelism_set), **kw))

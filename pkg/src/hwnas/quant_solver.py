"""Minimum-perturbation bitwidth selection under a latency budget.

For a fixed architecture every per-kernel weight bitwidth assignment is
enumerated (``7^M`` schemes); each is allocated on the device and kept when
its optimal latency meets the budget.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .allocator import DEFAULT_PARALLELISM, AllocationProblem, AllocationSolution, solve
from .arch import Architecture, QuantScheme
from .exceptions import Infeasible
from .perturbation import PerturbationReport, SensitivityProfile, total_perturbation
from .resources import HardwareBudget

BIT_CHOICES = (2, 3, 4, 5, 6, 7, 8)


@dataclass(frozen=True)
class QuantSettings:
    """Knobs shared by the quantization solver and the band check."""

    act_bits: int = 8
    search_activations: bool = False
    bit_choices: tuple[int, ...] = BIT_CHOICES
    q_p: int = 24
    q_s: int = 16
    parallelism_set: tuple[int, ...] = DEFAULT_PARALLELISM
    threads: int = 1


@dataclass(frozen=True)
class SchemeEvaluation:
    quant: QuantScheme
    latency: int
    perturbation: float
    allocation: AllocationSolution | None = None
    report: PerturbationReport | None = None


@dataclass(frozen=True)
class QuantResult:
    quant: QuantScheme
    allocation: AllocationSolution
    perturbation: PerturbationReport

    @property
    def latency_cycles(self) -> int:
        return self.allocation.latency.total_cycles

    def to_dict(self) -> dict:
        return {
            "quant": str(self.quant),
            "quant_detail": self.quant.to_dict(),
            "perturbation": self.perturbation.to_dict(),
            "allocation": self.allocation.to_dict(),
        }


def enumerate_schemes(M: int, settings: QuantSettings = QuantSettings()) -> Iterable[QuantScheme]:
    bits = settings.bit_choices
    if settings.search_activations:
        pairs = list(itertools.product(bits, bits))
        for combo in itertools.product(pairs, repeat=M):
            yield QuantScheme(combo, q_p=settings.q_p, q_s=settings.q_s)
    else:
        for combo in itertools.product(bits, repeat=M):
            yield QuantScheme(tuple((settings.act_bits, w) for w in combo), q_p=settings.q_p, q_s=settings.q_s)


def choose_scheme(
    evaluations: Sequence[SchemeEvaluation],
    lat0: float,
    alpha: float | None = None,
) -> SchemeEvaluation:
    """Pick the minimum-perturbation evaluation with ``latency <= lat0``.

    With ``alpha`` the latency must also be at least ``alpha * lat0``. Ties
    go to lower latency, then more total bits, then enumeration order.
    """
    best = None
    best_key = None
    for order, ev in enumerate(evaluations):
        if ev.latency > lat0:
            continue
        if alpha is not None and ev.latency < alpha * lat0:
            continue
        key = (ev.perturbation, ev.latency, -ev.quant.total_bits, order)
        if best_key is None or key < best_key:
            best, best_key = ev, key
    if best is None:
        raise Infeasible("latency", f"no quantization scheme meets the latency budget {lat0:g}")
    return best


def _evaluate(arch, profile, budget, settings, quant) -> SchemeEvaluation | None:
    try:
        sol = solve(AllocationProblem(arch, quant, budget, settings.parallelism_set))
    except Infeasible:
        return None
    rep = total_perturbation(arch, quant, profile)
    return SchemeEvaluation(quant, sol.latency.total_cycles, rep.total, sol, rep)


def evaluate_schemes(arch, profile, budget, settings: QuantSettings = QuantSettings()) -> list[SchemeEvaluation]:
    """Allocate every scheme; schemes the device cannot fit are left out."""
    schemes = list(enumerate_schemes(arch.template.M, settings))
    if settings.threads > 1:
        with ThreadPoolExecutor(settings.threads) as pool:
            results = list(pool.map(lambda q: _evaluate(arch, profile, budget, settings, q), schemes))
    else:
        results = [_evaluate(arch, profile, budget, settings, q) for q in schemes]
    return [r for r in results if r is not None]


def solve_quant(
    arch: Architecture,
    profile: SensitivityProfile,
    budget: HardwareBudget,
    lat0: float,
    alpha: float = 0.0,
    enforce_band: bool = False,
    settings: QuantSettings = QuantSettings(),
) -> QuantResult:
    """Quantization scheme of least perturbation whose latency is at most ``lat0``.

    ``enforce_band`` additionally requires latency >= ``alpha * lat0``; by
    default the band only filters architectures (see :func:`feasibility_band`).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if lat0 <= 0:
        raise ValueError("lat0 must be positive")
    evaluations = evaluate_schemes(arch, profile, budget, settings)
    best = choose_scheme(evaluations, lat0, alpha if enforce_band else None)
    return QuantResult(best.quant, best.allocation, best.report)


def probe_scheme(M: int, bits: int, settings: QuantSettings = QuantSettings()) -> QuantScheme:
    q_a = bits if settings.search_activations else settings.act_bits
    return QuantScheme.uniform(M, q_a, bits, q_p=settings.q_p, q_s=settings.q_s)


def band_latencies(arch, budget, settings: QuantSettings = QuantSettings()):
    """Optimal latency at uniform 8-bit and at uniform 2-bit weights.

    Either entry is ``None`` when that probe cannot be allocated.
    """
    out = []
    for bits in (8, 2):
        q = probe_scheme(arch.template.M, bits, settings)
        try:
            out.append(solve(AllocationProblem(arch, q, budget, settings.parallelism_set)).latency.total_cycles)
        except Infeasible:
            out.append(None)
    return tuple(out)


def band_holds(lat8, lat2, lat0: float, alpha: float) -> bool:
    if lat8 is None or lat2 is None:
        return False
    return alpha * lat0 <= lat8 and lat2 <= lat0


def feasibility_band(arch, budget, lat0: float, alpha: float, settings: QuantSettings = QuantSettings()) -> bool:
    """Architecture-level filter: ``alpha*lat0 <= L(A, 8bit)`` and ``L(A, 2bit) <= lat0``."""
    lat8, lat2 = band_latencies(arch, budget, settings)
    return band_holds(lat8, lat2, lat0, alpha)

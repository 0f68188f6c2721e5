import itertools
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BOTTLENECK, architectures, chain
from hwnas.arch import QuantScheme, SubgraphTemplate, depthwise, full, group_layers
from hwnas.allocator import solve_for
from hwnas.exceptions import Infeasible
from hwnas.perturbation import synthetic_profile, total_perturbation
from hwnas.quant_solver import (
    QuantSettings,
    SchemeEvaluation,
    band_holds,
    band_latencies,
    choose_scheme,
    enumerate_schemes,
    evaluate_schemes,
    feasibility_band,
    solve_quant,
)
from hwnas.resources import HardwareBudget

PAIR = SubgraphTemplate((full(1), depthwise(3)))
SMALL = QuantSettings(parallelism_set=(1, 2, 4, 8, 16))


def _fake(bits, lat, pert):
    return SchemeEvaluation(QuantScheme(((8, bits),)), lat, pert)


def test_single_kernel_fixture_picks_4_bit():
    evals = [_fake(2, 50, 4.0), _fake(4, 70, 1.0), _fake(8, 100, 0.0625)]
    assert choose_scheme(evals, 80).quant.per_kernel == ((8, 4),)
    assert choose_scheme(evals, 100).quant.per_kernel == ((8, 8),)
    with pytest.raises(Infeasible) as err:
        choose_scheme(evals, 49)
    assert err.value.constraint == "latency"


def test_tie_break_prefers_lower_latency_then_more_bits():
    evals = [_fake(5, 90, 1.0), _fake(3, 60, 1.0), _fake(4, 60, 1.0)]
    assert choose_scheme(evals, 100).quant.per_kernel == ((8, 4),)


def test_band_examples():
    assert band_holds(100, 30, 90, 0.5)
    assert band_holds(1, 30, 90, 0.0) and not band_holds(1, 91, 90, 0.0)
    assert not band_holds(100, 30, 10**6, 1.0)
    assert not band_holds(None, 30, 90, 0.5)


def test_band_and_solver_may_disagree():
    # band holds (45 <= 100, 30 <= 90) but no scheme lands inside [45, 90]
    evals = [_fake(2, 30, 4.0), _fake(8, 100, 0.1)]
    assert band_holds(100, 30, 90, 0.5)
    with pytest.raises(Infeasible):
        choose_scheme(evals, 90, alpha=0.5)
    # without the band on the final choice the 2-bit scheme is taken
    assert choose_scheme(evals, 90).latency == 30


def test_enumeration_size():
    assert len(list(enumerate_schemes(3))) == 343
    assert len(list(enumerate_schemes(1, QuantSettings(search_activations=True)))) == 49


def test_real_architecture_extremes(bottleneck_arch, zu3eg):
    prof = synthetic_profile(bottleneck_arch, 3)
    lat8, lat2 = band_latencies(bottleneck_arch, zu3eg)
    top = solve_quant(bottleneck_arch, prof, zu3eg, lat8)
    assert top.quant.per_kernel == ((8, 8),) * 3
    with pytest.raises(Infeasible):
        solve_quant(bottleneck_arch, prof, zu3eg, lat2 - 1)
    assert feasibility_band(bottleneck_arch, zu3eg, lat8, 0.5)
    assert not feasibility_band(bottleneck_arch, zu3eg, lat2 - 1, 0.0)
    assert not feasibility_band(bottleneck_arch, HardwareBudget(0, 0, 0), lat8, 0.5)
    with pytest.raises(ValueError):
        solve_quant(bottleneck_arch, prof, zu3eg, lat8, alpha=1.5)


def _analytic_pert(arch, bits_per_slot, profile):
    total = 0.0
    for slot_layers, bits in zip(_layers_by_slot(arch), bits_per_slot):
        for i in slot_layers:
            e = profile[i]
            step = 2 * e.range / (2**bits - 1)
            total += e.trace * e.n_params * step * step / 12
    return total


def _layers_by_slot(arch):
    out = [[] for _ in range(arch.template.M)]
    for inst in group_layers(arch):
        for j, i in enumerate(inst.slots):
            if i is not None and not inst.skip_mask[j]:
                out[j].append(i)
    return out


@settings(max_examples=20, deadline=None)
@given(architectures(template=PAIR, max_instances=2, resolutions=(16, 32)), st.integers(0, 100), st.floats(0.0, 1.0))
def test_solver_equals_enumeration(arch, seed, frac):
    budget = HardwareBudget(200, 20000, 200)
    prof = synthetic_profile(arch, seed)
    table = []
    for bits in itertools.product(range(2, 9), repeat=2):
        q = QuantScheme(tuple((8, b) for b in bits))
        try:
            lat = solve_for(arch, q, budget, SMALL.parallelism_set).latency.total_cycles
        except Infeasible:
            continue
        table.append((lat, _analytic_pert(arch, bits, prof), bits))
    if not table:
        return
    lats = sorted(t[0] for t in table)
    lat0 = lats[0] + frac * (lats[-1] - lats[0])
    res = solve_quant(arch, prof, budget, lat0, settings=SMALL)
    assert res.latency_cycles <= lat0
    got = res.perturbation.total
    assert got == pytest.approx(total_perturbation(arch, res.quant, prof).total)
    best = min(p for lat, p, _ in table if lat <= lat0)
    assert got == pytest.approx(best, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_optimal_perturbation_non_increasing_in_budget(seed):
    arch = _fixture(random.Random(seed))
    prof = synthetic_profile(arch, seed)
    budget = HardwareBudget(360, 70560, 432)
    evals = evaluate_schemes(arch, prof, budget, SMALL)
    lats = [e.latency for e in evals]
    ladder = [min(lats) * 0.9 + k * (max(lats) * 1.1 - min(lats) * 0.9) / 19 for k in range(20)]
    prev = math.inf
    for lat0 in ladder:
        try:
            p = choose_scheme(evals, lat0).perturbation
        except Infeasible:
            p = math.inf
        assert p <= prev
        prev = p
    assert prev < math.inf


def _fixture(rng):
    plan = []
    for _ in range(rng.randint(1, 2)):
        plan += [(full(1), rng.choice((16, 32, 64)), 1, False), (depthwise(3), 0, rng.choice((1, 2)), False),
                 (full(1), rng.choice((16, 32, 64)), 1, False)]
    return chain(rng.choice((16, 32)), BOTTLENECK, rng.choice((16, 32)), plan)


def test_parallel_evaluation_matches_sequential(bottleneck_arch, zu3eg):
    prof = synthetic_profile(bottleneck_arch, 0)
    seq = evaluate_schemes(bottleneck_arch, prof, zu3eg, SMALL)
    par = evaluate_schemes(bottleneck_arch, prof, zu3eg, QuantSettings(parallelism_set=SMALL.parallelism_set, threads=4))
    assert [(e.quant, e.latency, e.perturbation) for e in seq] == [(e.quant, e.latency, e.perturbation) for e in par]

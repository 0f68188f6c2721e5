import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import architectures
from hwnas.arch import Architecture, LayerSpec, QuantScheme, SubgraphTemplate, depthwise, full
from hwnas.allocator import AllocationProblem, AllocationSolution, solve, solve_for
from hwnas.exceptions import Infeasible
from hwnas.resources import HardwareBudget, MapTarget

PAIR_DW = SubgraphTemplate((full(1), depthwise(3)))
PAIR_FULL = SubgraphTemplate((full(3), full(1)))


def _single_layer():
    return Architecture.build(4, SubgraphTemplate((full(1),)), [LayerSpec(full(1), 16, 16)])


def test_small_example_picks_full_parallelism():
    sol = solve(AllocationProblem(_single_layer(), QuantScheme.uniform(1), HardwareBudget(16, 70560, 432),
                                  (1, 2, 4), include_quant_unit=False))
    (a,) = sol.per_kernel
    assert (a.pi, a.po) == (4, 4)
    assert sol.latency.per_subgraph[0].compute == (256,)
    assert sol.optimal


def test_zero_dsp_without_luts_is_infeasible():
    with pytest.raises(Infeasible) as err:
        solve(AllocationProblem(_single_layer(), QuantScheme.uniform(1), HardwareBudget(0, 70560, 432),
                                (1, 2, 4), mappings=(MapTarget.DSP,), include_quant_unit=False))
    assert err.value.constraint == "dsp"


def test_bram_shortage_is_reported():
    arch = Architecture.build(8, SubgraphTemplate((full(3),)), [LayerSpec(full(3), 512, 512)])
    with pytest.raises(Infeasible) as err:
        solve_for(arch, QuantScheme.uniform(1), HardwareBudget(360, 70560, 10))
    assert err.value.constraint == "bram"


def test_problem_validation():
    arch = _single_layer()
    with pytest.raises(ValueError):
        AllocationProblem(arch, QuantScheme.uniform(1), HardwareBudget(1, 1, 1), (4, 2))
    with pytest.raises(ValueError):
        AllocationProblem(arch, QuantScheme.uniform(1), HardwareBudget(1, 1, 1), ())
    with pytest.raises(ValueError):
        AllocationProblem(arch, QuantScheme.uniform(2), HardwareBudget(1, 1, 1))


budgets = st.builds(
    HardwareBudget,
    t_dsp=st.integers(0, 300),
    t_luts=st.integers(0, 60000),
    t_bram=st.integers(0, 120),
    beta=st.sampled_from((0.25, 0.5, 1.0)),
)
psets = st.lists(st.sampled_from((1, 2, 4, 8, 16, 32)), min_size=1, max_size=5, unique=True).map(lambda s: tuple(sorted(s)))
schemes = st.tuples(st.integers(2, 8), st.integers(2, 8))


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from((PAIR_DW, PAIR_FULL)).flatmap(lambda t: architectures(template=t, max_instances=2, resolutions=(8, 16))),
    budgets,
    psets,
    st.lists(schemes, min_size=2, max_size=2),
    st.booleans(),
)
def test_matches_brute_force(arch, budget, pset, bits, qunit):
    quant = QuantScheme(tuple(bits))
    want = oracles.brute_force_allocation(arch, quant, budget, pset, quant_unit=qunit)
    problem = AllocationProblem(arch, quant, budget, pset, include_quant_unit=qunit)
    if want is None:
        with pytest.raises(Infeasible):
            solve(problem)
        return
    sol = solve(problem)
    assert sol.optimal
    assert sol.per_kernel == want[1]
    assert (sol.latency.total_cycles, *sol.resources.as_tuple()) == want[0][:4]
    # independent feasibility re-check
    res = oracles.network_resources(arch, quant, sol.per_kernel, budget, qunit)
    assert res == sol.resources.as_tuple()
    assert res[0] <= budget.t_dsp and res[1] <= budget.t_luts * budget.beta and res[2] <= budget.t_bram


@settings(max_examples=40, deadline=None)
@given(architectures(max_instances=2, resolutions=(16, 32)), budgets, st.sampled_from((0.1, 0.25, 0.5)))
def test_raising_beta_never_hurts(arch, budget, beta):
    quant = QuantScheme.uniform(3)

    def best(b):
        try:
            return solve_for(arch, quant, HardwareBudget(budget.t_dsp, budget.t_luts, budget.t_bram, beta=b)).latency.total_cycles
        except Infeasible:
            return float("inf")

    assert best(beta * 2) <= best(beta)


def test_deterministic_and_json_round_trip(bottleneck_arch, zu3eg):
    quant = QuantScheme(((8, 4), (8, 6), (8, 8)))
    a = solve_for(bottleneck_arch, quant, zu3eg)
    b = solve_for(bottleneck_arch, quant, zu3eg)
    assert a == b
    assert AllocationSolution.from_dict(a.to_dict()) == a
    assert set(a.to_dict()) == {"per_kernel", "resources", "latency", "optimal"}


def test_node_limit_returns_incumbent(bottleneck_arch, zu3eg):
    quant = QuantScheme.uniform(3)
    exact = solve_for(bottleneck_arch, quant, zu3eg)
    rough = solve(AllocationProblem(bottleneck_arch, quant, zu3eg), max_nodes=1)
    assert rough.latency.total_cycles >= exact.latency.total_cycles
    assert rough.resources.dsp <= zu3eg.t_dsp

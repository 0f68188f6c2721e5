import sys
from pathlib import Path

import pytest
from hypothesis import strategies as st

from hwnas.arch import Architecture, LayerSpec, SubgraphTemplate, depthwise, full
from hwnas.resources import HardwareBudget

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).resolve().parents[1] / "src" / "hwnas" / "data"
BOTTLENECK = SubgraphTemplate((full(1), depthwise(3), full(1)))
SMALL_CHANNELS = (16, 32, 64, 128)


def chain(resolution, template, in_ch, plan):
    """Build an architecture from ``(kernel, out_ch, stride, skipped)`` tuples; in_ch chains."""
    specs = []
    ch = in_ch
    for kernel, out, stride, skipped in plan:
        if kernel.is_depthwise or skipped:
            out = ch
        specs.append(LayerSpec(kernel, ch, out, 1 if skipped else stride, skipped))
        ch = out
    return Architecture.build(resolution, template, specs)


@st.composite
def architectures(draw, template=BOTTLENECK, channels=SMALL_CHANNELS, max_instances=3, resolutions=(32, 64, 96)):
    """Valid architectures: whole template instances with random widths, strides and skips."""
    n_inst = draw(st.integers(1, max_instances))
    ch = draw(st.sampled_from(channels))
    specs = []
    for _ in range(n_inst):
        for kernel in template.kernels:
            skipped = draw(st.booleans()) if draw(st.integers(0, 4)) == 0 else False
            if skipped:
                specs.append(LayerSpec(kernel, ch, ch, 1, True))
                continue
            stride = draw(st.sampled_from((1, 1, 2)))
            out = ch if kernel.is_depthwise else draw(st.sampled_from(channels))
            specs.append(LayerSpec(kernel, ch, out, stride, False))
            ch = out
    return Architecture.build(draw(st.sampled_from(resolutions)), template, specs)


@pytest.fixture
def zu3eg():
    from hwnas.resources import load_budget

    return load_budget("zu3eg")


@pytest.fixture
def roomy_budget():
    return HardwareBudget(t_dsp=2000, t_luts=400000, t_bram=2000)


@pytest.fixture
def bottleneck_arch():
    return chain(32, BOTTLENECK, 16, [
        (full(1), 32, 1, False),
        (depthwise(3), 0, 2, False),
        (full(1), 32, 1, False),
        (full(1), 64, 1, False),
        (depthwise(3), 0, 1, False),
        (full(1), 32, 1, False),
    ])

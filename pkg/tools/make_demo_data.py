"""Regenerate the bundled data files under src/hwnas/data."""
from __future__ import annotations

import json
import warnings
from pathlib import Path

from hwnas.arch import Architecture, LayerSpec, SubgraphTemplate, depthwise, full
from hwnas.perturbation import save_profile, synthetic_profile
from hwnas.predictor import SVRAccuracyPredictor, save_dataset, synthetic_dataset
from hwnas.resources import KernelAllocation, MapTarget

DATA = Path(__file__).resolve().parents[1] / "src" / "hwnas" / "data"
BOTTLENECK = SubgraphTemplate((full(1), depthwise(3), full(1)))


def mbv2_tail() -> Architecture:
    """Two inverted-bottleneck blocks at 14x14, the late stage of a MobileNetV2-like net."""
    return Architecture.build(14, BOTTLENECK, [
        LayerSpec(full(1), 64, 128, 1, False),
        LayerSpec(depthwise(3), 128, 128, 1, False),
        LayerSpec(full(1), 128, 128, 1, False),
        LayerSpec(full(1), 128, 256, 1, False),
        LayerSpec(depthwise(3), 256, 256, 2, False),
        LayerSpec(full(1), 256, 256, 1, False),
    ])


def demo_seed() -> Architecture:
    return Architecture.build(96, BOTTLENECK, [
        LayerSpec(full(1), 3, 16, 2, False),
        LayerSpec(depthwise(3), 16, 16, 2, False),
        LayerSpec(full(1), 16, 32, 1, False),
        LayerSpec(full(1), 32, 64, 1, False),
        LayerSpec(depthwise(3), 64, 64, 2, False),
        LayerSpec(full(1), 64, 32, 1, False),
        LayerSpec(full(1), 32, 64, 1, False),
        LayerSpec(depthwise(3), 64, 64, 1, False),
        LayerSpec(full(1), 64, 64, 1, False),
    ])


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    (DATA / "mbv2_tail.json").write_text(mbv2_tail().to_json() + "\n")
    allocs = [KernelAllocation(8, 8, MapTarget.DSP, 8), KernelAllocation(1, 16, MapTarget.DSP, 16), KernelAllocation(8, 8, MapTarget.DSP, 8)]
    (DATA / "mbv2_tail_alloc.json").write_text(json.dumps([a.to_dict() for a in allocs], indent=2) + "\n")

    lines = ["predicted,measured_ms"]
    for x in (1.5, 2.0, 4.0, 6.5, 9.0, 12.25, 20.0):
        lines.append(f"{x!r},{1.27 * x + 3.8!r}")
    (DATA / "calibration_pairs.csv").write_text("\n".join(lines) + "\n")

    demo = DATA / "demo"
    demo.mkdir(exist_ok=True)
    seed = demo_seed()
    (demo / "seed_arch.json").write_text(seed.to_json() + "\n")
    save_profile(demo / "profile.csv", synthetic_profile(seed, seed=7, weight_range=0.5))
    _, X, y = synthetic_dataset(200, seed=3, max_layers=16)
    save_dataset(demo / "dataset.csv", X, y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        SVRAccuracyPredictor(C=1.0, epsilon=0.002, gamma=0.01).fit(X, y).save(demo / "model.json")


if __name__ == "__main__":
    main()

import json

import pytest

import oracles
from conftest import BOTTLENECK, DATA
from hwnas.allocator import AllocationSolution, solve_for
from hwnas.arch import Architecture, LayerSpec, QuantScheme, depthwise, full, validate
from hwnas.cli import main
from hwnas.latency import Calibration, LatencyReport
from hwnas.perturbation import load_profile, save_profile, synthetic_profile
from hwnas.quant_solver import band_latencies
from hwnas.resources import load_budget, parse_allocations

ARCH = str(DATA / "mbv2_tail.json")
ALLOC = str(DATA / "mbv2_tail_alloc.json")
Q8 = "8,8;8,8;8,8"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_estimate_reproduces_fixture_counts(capsys):
    code, out, _ = run(capsys, "estimate", "--arch", ARCH, "--quant", Q8, "--alloc", ALLOC)
    assert code == 0
    doc = json.loads(out)
    rep = LatencyReport.from_dict(doc["latency"])
    first = rep.per_subgraph[0]
    assert (first.lat_on, first.compute, first.lat_off, first.weight_load) == (1568, (25088, 1568, 50176), 3136, (1024, 144, 2048))
    assert first.total == 53392
    assert rep.total_cycles == 166320
    arch = Architecture.from_json(open(ARCH).read())
    allocs = parse_allocations(";".join(f"{a['pi']},{a['po']},{a['map_to']},{a['pf']}" for a in json.load(open(ALLOC))))
    budget = load_budget("zu3eg")
    assert rep.total_cycles == oracles.network_cycles(arch, QuantScheme.parse(Q8), allocs, budget.bw)
    res = doc["resources"]
    assert (res["dsp"], res["luts"], res["bram"]) == oracles.network_resources(arch, QuantScheme.parse(Q8), allocs, budget)


def test_estimate_without_alloc_uses_optimum(capsys):
    code, out, _ = run(capsys, "estimate", "--arch", ARCH, "--quant", Q8)
    assert code == 0
    doc = json.loads(out)
    arch = Architecture.from_json(open(ARCH).read())
    sol = solve_for(arch, QuantScheme.parse(Q8), load_budget("zu3eg"))
    assert doc["latency"]["total_cycles"] == sol.latency.total_cycles
    assert doc["fits_budget"] is True


def test_allocate_round_trip_and_infeasible(capsys, tmp_path):
    code, out, _ = run(capsys, "allocate", "--arch", ARCH, "--quant", Q8, "--out", tmp_path / "sol.json")
    assert code == 0
    sol = AllocationSolution.from_dict(json.loads(out))
    assert sol == solve_for(Architecture.from_json(open(ARCH).read()), QuantScheme.parse(Q8), load_budget("zu3eg"))
    assert json.loads((tmp_path / "sol.json").read_text()) == json.loads(out)
    (tmp_path / "tiny.toml").write_text("t_dsp = 0\nt_luts = 0\nt_bram = 0\n")
    code, out, err = run(capsys, "allocate", "--arch", ARCH, "--quant", Q8, "--device", tmp_path / "tiny.toml")
    assert code == 2 and out == ""
    assert json.loads(err)["error"] == "infeasible"


def test_calibrate_bundled_pairs(capsys, tmp_path):
    code, out, _ = run(capsys, "calibrate", "--pairs", DATA / "calibration_pairs.csv", "--out", tmp_path / "c.json")
    assert code == 0
    assert json.loads(out) == {"slope": 1.27, "intercept": 3.8, "r": 1.0}
    cal = Calibration.from_dict(json.loads((tmp_path / "c.json").read_text()))
    assert cal.slope == pytest.approx(1.27, abs=1e-9) and cal.intercept == pytest.approx(3.8, abs=1e-9)


def test_calibrate_degenerate_is_a_usage_error(capsys, tmp_path):
    (tmp_path / "p.csv").write_text("predicted,measured_ms\n1,2\n1,3\n")
    code, _, err = run(capsys, "calibrate", "--pairs", tmp_path / "p.csv")
    assert code == 1 and json.loads(err)["error"] == "invalid"


def test_validate_exit_codes(capsys, tmp_path):
    code, out, _ = run(capsys, "validate", "--arch", ARCH)
    assert code == 0 and json.loads(out)["valid"]
    broken = Architecture.build(96, BOTTLENECK, [LayerSpec(full(1), 16, 64), LayerSpec(depthwise(3), 32, 32)])
    (tmp_path / "broken.json").write_text(broken.to_json())
    code, out, _ = run(capsys, "validate", "--arch", tmp_path / "broken.json")
    doc = json.loads(out)
    assert code == 1 and not doc["valid"] and doc["violations"]
    code, out, err = run(capsys, "validate", "--arch", ARCH, "--resolution-set", "96,128")
    assert code == 1


def test_io_and_parse_errors_exit_3(capsys, tmp_path):
    code, _, err = run(capsys, "validate", "--arch", tmp_path / "missing.json")
    assert code == 3 and json.loads(err)["error"] == "io"
    (tmp_path / "bad.json").write_text("{")
    code, _, err = run(capsys, "estimate", "--arch", tmp_path / "bad.json", "--quant", Q8)
    assert code == 3 and "message" in json.loads(err)


def test_usage_errors_exit_1(capsys):
    code, _, err = run(capsys, "estimate", "--arch", ARCH)
    assert code == 1 and json.loads(err)["error"] == "usage"
    code, _, err = run(capsys, "estimate", "--arch", ARCH, "--quant", "8,8")
    assert code == 1
    code, _, _ = run(capsys, "no-such-command")
    assert code == 1


def test_quantize_and_search(capsys, tmp_path, bottleneck_arch):
    (tmp_path / "a.json").write_text(bottleneck_arch.to_json())
    save_profile(tmp_path / "p.csv", synthetic_profile(bottleneck_arch, 0))
    lat8, lat2 = band_latencies(bottleneck_arch, load_budget("zu3eg"))
    code, out, _ = run(capsys, "quantize", "--arch", tmp_path / "a.json", "--profile", tmp_path / "p.csv", "--lat0", lat8,
                       "--threads", 1)
    assert code == 0
    doc = json.loads(out)
    assert doc["quant"] == Q8 and doc["band"]["holds"]
    assert load_profile(tmp_path / "p.csv")[0].range == 0.5
    code, _, err = run(capsys, "quantize", "--arch", tmp_path / "a.json", "--profile", tmp_path / "p.csv", "--lat0", lat2 - 1)
    assert code == 2

    argv = ["search", "--seed-arch", tmp_path / "a.json", "--lat0", lat2 * 1.5, "--rollouts", 20, "--max-depth", 4,
            "--rng", 3, "--channel-set", "16,32,64", "--resolution-set", "32,64", "--threads", 1]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    pool = json.loads(out)
    assert pool and all(p["band"]["holds"] for p in pool)
    for p in pool:
        assert validate(Architecture.from_dict(p["arch"]), (16, 32, 64), (32, 64)) == []
    assert run(capsys, *argv)[1] == out


def test_train_and_predict(capsys, tmp_path):
    code, out, _ = run(capsys, "train-predictor", "--data", DATA / "demo" / "dataset.csv", "--out", tmp_path / "m.json",
                       "--cv", 3, "--C", "1,10", "--epsilon", "0.002", "--gamma", "0.01")
    assert code == 0
    report = json.loads(out)
    assert report["cv"]["k_folds"] == 3 and len(report["cv"]["grid"]) == 2
    code, out, _ = run(capsys, "predict", "--model", tmp_path / "m.json", "--arch", DATA / "demo" / "seed_arch.json")
    assert code == 0
    assert 0.0 < json.loads(out)["predicted_accuracy"] < 1.0

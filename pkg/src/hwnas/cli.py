"""``hwnas`` command line.

Exit codes: 0 success, 1 validation or usage error, 2 infeasible,
3 unreadable or unparsable input. Errors are also written to stderr as a
JSON object ``{"error": kind, "message": ...}``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .allocator import DEFAULT_PARALLELISM, AllocationProblem, solve
from .arch import DEFAULT_CHANNEL_SET, DEFAULT_RESOLUTION_SET, Architecture, QuantScheme, group_layers, validate
from .exceptions import DegenerateDataWarning, EmptyPool, Infeasible
from .latency import Calibration, fit_calibration, network_latency
from .mcts import SearchConfig, search_with_band
from .perturbation import load_profile
from .predictor import SVRAccuracyPredictor, cross_validate, encode, load_dataset
from .quant_solver import BIT_CHOICES, QuantSettings, band_holds, band_latencies, solve_quant
from .resources import KernelAllocation, load_budget, network_resources

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code, self.kind, self.extra = code, kind, extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_INVALID, "usage", f"{self.prog}: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _load(what: str, path, fn):
    """Run a loader; any failure becomes an I/O / parse error (exit 3)."""
    try:
        return fn(path)
    except CliError:
        raise
    except Exception as exc:
        raise CliError(EXIT_IO, "io", f"cannot read {what} {path}: {exc}", path=str(path))


def _arch(path) -> Architecture:
    return _load("architecture", path, lambda p: Architecture.from_json(Path(p).read_text()))


def _device(name):
    if str(name).lower() == "zu3eg":
        return load_budget("zu3eg")
    return _load("device", name, load_budget)


def _quant(text: str, arch: Architecture) -> QuantScheme:
    try:
        q = QuantScheme.parse(text)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, "usage", f"bad --quant {text!r}: {exc}")
    if q.M != arch.template.M:
        raise CliError(EXIT_INVALID, "usage", f"--quant has {q.M} kernels, template has {arch.template.M}")
    return q


def _allocs(path):
    def read(p):
        doc = json.loads(Path(p).read_text())
        items = doc["per_kernel"] if isinstance(doc, dict) else doc
        return tuple(KernelAllocation.from_dict(a) for a in items)

    return _load("allocation", path, read)


def _calibration(path):
    return _load("calibration", path, lambda p: Calibration.from_dict(json.loads(Path(p).read_text())))


def _emit(obj, out=None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)


def _check_valid(arch: Architecture, channel_set=None, resolution_set=None):
    problems = validate(arch, channel_set, resolution_set)
    if problems:
        raise CliError(EXIT_INVALID, "validation", "architecture is invalid", violations=[v.to_dict() for v in problems])


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


# --- subcommands ---------------------------------------------------------

def cmd_estimate(args):
    arch = _arch(args.arch)
    _check_valid(arch)
    budget = _device(args.device)
    quant = _quant(args.quant, arch)
    calib = _calibration(args.calibration) if args.calibration else None
    if args.alloc:
        allocs = _allocs(args.alloc)
        if len(allocs) != arch.template.M:
            raise CliError(EXIT_INVALID, "usage", f"allocation has {len(allocs)} kernels, template has {arch.template.M}")
    else:
        allocs = solve(AllocationProblem(arch, quant, budget, args.parallelism)).per_kernel
    instances = group_layers(arch)
    lat = network_latency(arch, quant, allocs, budget, calib, instances)
    res = network_resources(arch, quant, allocs, budget, instances=instances)
    _emit({
        "allocation": [a.to_dict() for a in allocs],
        "latency": lat.to_dict(),
        "resources": res.to_dict(),
        "fits_budget": budget.fits(res),
        "violations": budget.violations(res),
    }, args.out)


def cmd_allocate(args):
    arch = _arch(args.arch)
    _check_valid(arch)
    budget = _device(args.device)
    quant = _quant(args.quant, arch)
    sol = solve(AllocationProblem(arch, quant, budget, args.parallelism))
    _emit(sol.to_dict(), args.out)


def _settings(args) -> QuantSettings:
    return QuantSettings(act_bits=args.act_bits, bit_choices=args.bits, parallelism_set=args.parallelism, threads=_threads(args))


def cmd_quantize(args):
    arch = _arch(args.arch)
    _check_valid(arch)
    budget = _device(args.device)
    profile = _load("profile", args.profile, load_profile).adapt(arch)
    settings = _settings(args)
    res = solve_quant(arch, profile, budget, args.lat0, args.alpha, args.enforce_band, settings)
    lat8, lat2 = band_latencies(arch, budget, settings)
    doc = {
        "quant": str(res.quant),
        "latency_cycles": res.latency_cycles,
        "perturbation": res.perturbation.to_dict(),
        "allocation": res.allocation.to_dict(),
        "band": {"lat0": args.lat0, "alpha": args.alpha, "lat_8bit": lat8, "lat_2bit": lat2,
                 "holds": band_holds(lat8, lat2, args.lat0, args.alpha)},
    }
    _emit(doc, args.out)


def cmd_search(args):
    arch = _arch(args.seed_arch)
    _check_valid(arch, args.channel_set, args.resolution_set)
    budget = _device(args.device)
    cfg = SearchConfig(
        lat0=args.lat0, alpha=args.alpha, exploration_c=args.c, max_rollouts=args.rollouts,
        max_depth=args.max_depth, rng_seed=args.rng, channel_set=args.channel_set,
        resolution_set=args.resolution_set, max_layers=args.max_layers, n_trees=args.trees,
        threads=_threads(args), quant=QuantSettings(act_bits=args.act_bits, parallelism_set=args.parallelism),
    )
    pool = search_with_band(arch, cfg, budget)
    _emit([
        {"arch": a.to_dict(), "band": {"lat0": args.lat0, "alpha": args.alpha, "lat_8bit": l8, "lat_2bit": l2, "holds": True}}
        for a, (l8, l2) in pool
    ], args.out)


def cmd_train_predictor(args):
    X, y = _load("dataset", args.data, load_dataset)
    params = {"C": args.C[0], "epsilon": args.epsilon[0], "gamma": args.gamma[0] if args.gamma else None}
    report = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateDataWarning)
        if args.cv:
            gammas = args.gamma or (None,)
            grid = [(C, e, g) for C in args.C for e in args.epsilon for g in gammas]
            cv = cross_validate(X, y, grid, k_folds=args.cv, seed=args.rng)
            params = cv.best_params
            report["cv"] = {
                "k_folds": args.cv,
                "best": params,
                "grid": [{**p, "mean_rmse": cv.mean_rmse(i), "fold_rmse": cv.fold_rmse[i]} for i, p in enumerate(cv.grid)],
            }
        model = SVRAccuracyPredictor(**params).fit(X, y)
    model.save(args.out)
    pred = model.predict(X)
    report.update({
        "model": str(args.out),
        "hyperparams": params,
        "n_samples": int(len(y)),
        "n_support": int(len(model.dual_coef_)),
        "train_rmse": float(math.sqrt(float(((pred - y) ** 2).mean()))),
        "warnings": [str(w.message) for w in caught if issubclass(w.category, DegenerateDataWarning)],
    })
    _emit(report)


def cmd_predict(args):
    model = _load("model", args.model, SVRAccuracyPredictor.load)
    arch = _arch(args.arch)
    fv = encode(arch, model.max_layers)
    _emit({"predicted_accuracy": float(model.predict(fv[None, :])[0])})


def cmd_calibrate(args):
    def read(p):
        with open(p, newline="") as fh:
            return [(float(r["predicted"]), float(r["measured_ms"])) for r in csv.DictReader(fh)]

    pairs = _load("pairs", args.pairs, read)
    cal = fit_calibration(pairs)
    if args.out:
        Path(args.out).write_text(json.dumps(cal.to_dict(), indent=2) + "\n")
    # 12 significant digits hide float noise from the least-squares solve
    _emit({k: float(f"{v:.12g}") for k, v in cal.to_dict().items()})


def cmd_pareto(args):
    from .pipeline import load_config, sweep, write_outputs

    cfg = _load("config", args.config, lambda p: load_config(p, threads=_threads(args)))
    lat0s = args.lat0 or cfg.lat0_list
    result = sweep(lat0s, cfg)
    x_label = "calibrated latency (ms)" if cfg.calibration else "latency (cycles)"
    paths = write_outputs(result, args.out_dir, x_label)
    for w in result.warnings:
        sys.stderr.write(json.dumps({"warning": "empty_pool", "message": w}) + "\n")
    _emit({**paths, "n_candidates": len(result.candidates), "n_frontier": len(result.frontier), "warnings": result.warnings})


def cmd_validate(args):
    arch = _arch(args.arch)
    problems = validate(arch, args.channel_set, args.resolution_set)
    _emit({"valid": not problems, "violations": [v.to_dict() for v in problems]})
    return EXIT_INVALID if problems else EXIT_OK


# --- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hwnas", description="Hardware-aware architecture, quantization and FPGA allocation search.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, arch_flag="--arch"):
        sp.add_argument(arch_flag, required=True, help="architecture JSON")
        sp.add_argument("--device", default="zu3eg", help="device TOML or the built-in name zu3eg")
        sp.add_argument("--parallelism", type=_int_list, default=DEFAULT_PARALLELISM, help="allowed pi/po values")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        sp.add_argument("--out", help="also write the JSON result here")

    sp = sub.add_parser("estimate", help="latency and resources of an architecture")
    common(sp)
    sp.add_argument("--quant", required=True, help='per-slot bits, "qa,qw;qa,qw;..."')
    sp.add_argument("--alloc", help="allocation JSON (default: the optimal allocation)")
    sp.add_argument("--calibration", help="calibration JSON from `calibrate`")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("allocate", help="latency-optimal parallelism and mapping")
    common(sp)
    sp.add_argument("--quant", required=True)
    sp.set_defaults(func=cmd_allocate)

    sp = sub.add_parser("quantize", help="least-perturbation bitwidths under a latency budget")
    common(sp)
    sp.add_argument("--profile", required=True, help="sensitivity CSV")
    sp.add_argument("--lat0", type=float, required=True, help="latency budget in cycles")
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--enforce-band", action="store_true", help="also require latency >= alpha * lat0")
    sp.add_argument("--bits", type=_int_list, default=BIT_CHOICES, help="weight bit choices")
    sp.add_argument("--act-bits", type=int, default=8)
    sp.set_defaults(func=cmd_quantize)

    sp = sub.add_parser("search", help="MCTS for architectures inside the latency band")
    common(sp, "--seed-arch")
    sp.add_argument("--lat0", type=float, required=True)
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--rollouts", type=int, default=1000)
    sp.add_argument("--max-depth", type=int, default=30)
    sp.add_argument("--rng", type=int, default=0, help="random seed")
    sp.add_argument("-c", type=float, default=math.sqrt(2), help="UCT exploration constant")
    sp.add_argument("--trees", type=int, default=1, help="independent root-parallel trees")
    sp.add_argument("--channel-set", type=_int_list, default=DEFAULT_CHANNEL_SET)
    sp.add_argument("--resolution-set", type=_int_list, default=DEFAULT_RESOLUTION_SET)
    sp.add_argument("--max-layers", type=int, default=64)
    sp.add_argument("--act-bits", type=int, default=8)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("train-predictor", help="fit the SVR accuracy predictor")
    sp.add_argument("--data", required=True, help="CSV with columns f0..fD,accuracy")
    sp.add_argument("--out", required=True, help="model JSON")
    sp.add_argument("--cv", type=int, default=0, help="k-fold grid search over --C/--epsilon/--gamma")
    sp.add_argument("--C", type=_float_list, default=(1.0,))
    sp.add_argument("--epsilon", type=_float_list, default=(0.01,))
    sp.add_argument("--gamma", type=_float_list, default=None, help="default: 1 / number of features")
    sp.add_argument("--rng", type=int, default=0, help="fold shuffle seed")
    sp.set_defaults(func=cmd_train_predictor)

    sp = sub.add_parser("predict", help="predicted accuracy of an architecture")
    sp.add_argument("--model", required=True)
    sp.add_argument("--arch", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("calibrate", help="fit measured_ms = slope * predicted + intercept")
    sp.add_argument("--pairs", required=True, help="CSV with columns predicted,measured_ms")
    sp.add_argument("--out", help="calibration JSON")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("pareto", help="run the budget sweep and export the frontier")
    sp.add_argument("--config", required=True, help="pipeline TOML")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--lat0", type=_float_list, default=None, help="override the budgets in the config")
    sp.add_argument("--threads", type=int, default=None)
    sp.set_defaults(func=cmd_pareto)

    sp = sub.add_parser("validate", help="list architecture invariant violations")
    sp.add_argument("--arch", required=True)
    sp.add_argument("--channel-set", type=_int_list, default=DEFAULT_CHANNEL_SET)
    sp.add_argument("--resolution-set", type=_int_list, default=None, help="also require the resolution to be listed")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        code = args.func(args)
        return EXIT_OK if code is None else code
    except CliError as exc:
        err = {"error": exc.kind, "message": str(exc), **exc.extra}
        code = exc.code
    except Infeasible as exc:
        err = {"error": "infeasible", "constraint": exc.constraint, "message": str(exc)}
        code = EXIT_INFEASIBLE
    except EmptyPool as exc:
        err = {"error": "empty_pool", "message": str(exc)}
        code = EXIT_INFEASIBLE
    except OSError as exc:
        err = {"error": "io", "message": str(exc)}
        code = EXIT_IO
    except ValueError as exc:
        err = {"error": "invalid", "type": type(exc).__name__, "message": str(exc)}
        code = EXIT_INVALID
    sys.stderr.write(json.dumps(err) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())

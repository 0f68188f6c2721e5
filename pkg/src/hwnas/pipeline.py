"""Budget sweep: search, quantize, rank, and build the accuracy-latency frontier.

For each latency budget (in cycles) the MCTS candidate pool is quantized
with :func:`~hwnas.quant_solver.solve_quant`, scored as
``predicted_accuracy - lam * perturbation`` and cut to the top ``k``. The
union over budgets is filtered to its pareto frontier and exported as CSV
plus an SVG scatter plot.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .arch import DEFAULT_CHANNEL_SET, DEFAULT_RESOLUTION_SET, Architecture, QuantScheme, group_layers, validate
from .exceptions import EmptyPool, Infeasible
from .latency import Calibration, cycles_to_ms, network_latency
from .mcts import ActionKind, SearchConfig, search_with_band
from .perturbation import SensitivityProfile, load_profile, synthetic_profile, total_perturbation
from .predictor import SVRAccuracyPredictor
from .quant_solver import BIT_CHOICES, QuantSettings, choose_scheme, evaluate_schemes
from .resources import HardwareBudget, format_allocations, load_budget, network_resources, parse_allocations
from .allocator import AllocationSolution, DEFAULT_PARALLELISM

log = logging.getLogger(__name__)

CSV_COLUMNS = ("lat0", "latency_cycles", "calibrated_ms", "perturbation", "predicted_acc", "score", "arch_path", "quant", "allocation")
RANKINGS = ("score", "lexicographic")


@dataclass(frozen=True)
class Candidate:
    lat0: float
    arch: Architecture
    quant: QuantScheme
    allocation: AllocationSolution
    latency_cycles: int
    perturbation: float
    predicted_accuracy: float
    score: float
    calibrated_ms: float | None = None

    def arch_key(self) -> str:
        return json.dumps(self.arch.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ParetoPoint:
    latency: float
    score: float
    candidate: Candidate | None = None


@dataclass
class PipelineConfig:
    seed_arch: Architecture
    budget: HardwareBudget
    predictor: SVRAccuracyPredictor
    profile: SensitivityProfile | None = None
    calibration: Calibration | None = None
    lat0_list: tuple[float, ...] = ()
    alpha: float = 0.5
    lam: float = 1.0
    ranking: str = "score"
    top_k: int = 5
    seed: int = 0
    rollouts: int = 200
    max_depth: int = 30
    exploration_c: float = math.sqrt(2)
    n_trees: int = 1
    channel_set: tuple[int, ...] = DEFAULT_CHANNEL_SET
    resolution_set: tuple[int, ...] = DEFAULT_RESOLUTION_SET
    max_layers: int | None = None
    action_kinds: frozenset = frozenset(ActionKind)
    pool_limit: int | None = None
    quant: QuantSettings = field(default_factory=QuantSettings)
    threads: int = 1

    def __post_init__(self):
        if self.ranking not in RANKINGS:
            raise ValueError(f"ranking must be one of {RANKINGS}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    def search_config(self, lat0: float) -> SearchConfig:
        limit = self.predictor.max_layers
        if self.max_layers is not None:
            limit = min(limit, self.max_layers)
        return SearchConfig(
            lat0=lat0,
            alpha=self.alpha,
            exploration_c=self.exploration_c,
            max_rollouts=self.rollouts,
            max_depth=self.max_depth,
            rng_seed=self.seed,
            channel_set=self.channel_set,
            resolution_set=self.resolution_set,
            max_layers=limit,
            action_kinds=self.action_kinds,
            n_trees=self.n_trees,
            threads=self.threads,
            quant=self.quant,
        )

    def profile_for(self, arch: Architecture) -> SensitivityProfile:
        base = self.profile if self.profile is not None else synthetic_profile(self.seed_arch, self.seed)
        return base.adapt(arch)


def rank_key(c: Candidate, ranking: str = "score"):
    if ranking == "lexicographic":
        return (-c.predicted_accuracy, c.perturbation, c.latency_cycles, c.arch_key(), str(c.quant))
    return (-c.score, c.latency_cycles, c.arch_key(), str(c.quant))


def rank_candidates(cands: Sequence[Candidate], ranking: str = "score", top_k: int | None = None) -> list[Candidate]:
    ordered = sorted(cands, key=lambda c: rank_key(c, ranking))
    return ordered if top_k is None else ordered[:top_k]


class SweepCache:
    """Budget-independent results shared by the budgets of one sweep."""

    def __init__(self):
        self.band: dict = {}
        self.evaluations: dict = {}
        self._lock = threading.Lock()

    def evaluations_for(self, arch, cfg: "PipelineConfig"):
        with self._lock:
            hit = self.evaluations.get(arch)
        if hit is None:
            hit = evaluate_schemes(arch, cfg.profile_for(arch), cfg.budget, cfg.quant)
            with self._lock:
                self.evaluations.setdefault(arch, hit)
        return hit


def make_candidate(arch, lat0, cfg: PipelineConfig, predicted: float, cache: SweepCache | None = None) -> Candidate | None:
    """Quantize ``arch`` for ``lat0``; ``None`` when no scheme meets the budget."""
    evaluations = (cache or SweepCache()).evaluations_for(arch, cfg)
    try:
        best = choose_scheme(evaluations, lat0)
    except Infeasible:
        return None
    cycles = best.latency
    ms = None
    if cfg.calibration is not None:
        ms = float(cfg.calibration.apply(cycles_to_ms(cycles, cfg.budget.clock_mhz)))
    pert = best.perturbation
    return Candidate(lat0, arch, best.quant, best.allocation, cycles, pert, predicted, predicted - cfg.lam * pert, ms)


def quantize_pool(archs: Sequence[Architecture], lat0: float, cfg: PipelineConfig, cache: SweepCache | None = None) -> list[Candidate]:
    """Quantize a candidate pool and return it ranked (all of it).

    With ``cfg.pool_limit`` only that many architectures, in order of
    predicted accuracy, are quantized.
    """
    if not archs:
        return []
    cache = cache or SweepCache()
    preds = cfg.predictor.predict_architectures(archs)
    order = sorted(range(len(archs)), key=lambda i: (-preds[i], i))
    if cfg.pool_limit is not None:
        order = order[: cfg.pool_limit]
    out = []
    for i in order:
        c = make_candidate(archs[i], lat0, cfg, float(preds[i]), cache)
        if c is not None:
            out.append(c)
    return rank_candidates(out, cfg.ranking)


def run_budget(lat0: float, cfg: PipelineConfig, cache: SweepCache | None = None) -> list[Candidate]:
    """Top-``k`` candidates for one latency budget.

    Raises :class:`EmptyPool` when the search finds no band-feasible
    architecture.
    """
    cache = cache or SweepCache()
    pool = search_with_band(cfg.seed_arch, cfg.search_config(lat0), cfg.budget, band_cache=cache.band)
    if not pool:
        raise EmptyPool(f"no architecture satisfies the latency band for lat0={lat0:g}")
    return quantize_pool([a for a, _ in pool], lat0, cfg, cache)[: cfg.top_k]


def pareto_front(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset (low latency, high score), sorted by latency.

    Exact duplicates are kept once, first occurrence wins.
    """
    ordered = sorted(points, key=lambda p: (p.latency, -p.score))
    front = []
    best = -math.inf
    for p in ordered:
        if p.score > best:
            front.append(p)
            best = p.score
    return front


def candidate_point(c: Candidate) -> ParetoPoint:
    lat = c.calibrated_ms if c.calibrated_ms is not None else float(c.latency_cycles)
    return ParetoPoint(lat, c.score, c)


@dataclass
class SweepResult:
    candidates: list[Candidate]
    frontier: list[ParetoPoint]
    warnings: list[str]


def sweep(lat0_list: Sequence[float], cfg: PipelineConfig) -> SweepResult:
    if not lat0_list:
        raise ValueError("need at least one latency budget")

    cache = SweepCache()

    def one(lat0):
        try:
            return run_budget(lat0, cfg, cache), None
        except EmptyPool as exc:
            return [], str(exc)

    if cfg.threads > 1 and len(lat0_list) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(one, lat0_list))
    else:
        results = [one(l) for l in lat0_list]
    cands, warns = [], []
    for lat0, (cs, w) in zip(lat0_list, results):
        cands.extend(cs)
        if w:
            warns.append(w)
            log.warning(w)
        elif not cs:
            msg = f"every architecture in the pool for lat0={lat0:g} failed quantization"
            warns.append(msg)
            log.warning(msg)
    return SweepResult(cands, pareto_front([candidate_point(c) for c in cands]), warns)


# --- validation ------------------------------------------------------------

def revalidate_candidate(arch, quant, allocs, lat0, latency_cycles, perturbation, budget, profile, tol: float = 1e-9) -> list[str]:
    """Recheck an exported candidate from scratch; returns a list of problems."""
    problems = [str(v) for v in validate(arch, channel_set=None, resolution_set=None)]
    try:
        instances = group_layers(arch)
    except Exception as exc:  # grouping failures are reported, not raised
        return problems + [f"grouping: {exc}"]
    res = network_resources(arch, quant, allocs, budget, instances=instances)
    problems += [f"{name} exceeds budget" for name in budget.violations(res)]
    lat = network_latency(arch, quant, allocs, budget, instances=instances).total_cycles
    if lat != latency_cycles:
        problems.append(f"latency {lat} != stored {latency_cycles}")
    if lat > lat0:
        problems.append(f"latency {lat} above budget {lat0:g}")
    pert = total_perturbation(arch, quant, profile.adapt(arch)).total
    if abs(pert - perturbation) > tol * max(1.0, abs(pert)):
        problems.append(f"perturbation {pert!r} != stored {perturbation!r}")
    return problems


# --- export ----------------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_outputs(result: SweepResult, out_dir, x_label: str = "latency") -> dict:
    """Write ``candidates.csv``, ``frontier.csv``, ``pareto.svg`` and ``archs/*.json``."""
    out = Path(out_dir)
    (out / "archs").mkdir(parents=True, exist_ok=True)
    paths: dict = {}
    for c in result.candidates:
        key = c.arch_key()
        if key not in paths:
            rel = f"archs/arch_{len(paths):04d}.json"
            (out / rel).write_text(c.arch.to_json() + "\n")
            paths[key] = rel

    def table(cands):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in cands:
            w.writerow([
                _fmt(float(c.lat0)), c.latency_cycles, _fmt(c.calibrated_ms), _fmt(c.perturbation),
                _fmt(c.predicted_accuracy), _fmt(c.score), paths[c.arch_key()], str(c.quant),
                format_allocations(c.allocation.per_kernel),
            ])
        return buf.getvalue()

    (out / "candidates.csv").write_text(table(result.candidates))
    (out / "frontier.csv").write_text(table([p.candidate for p in result.frontier]))
    points = [candidate_point(c) for c in result.candidates]
    (out / "pareto.svg").write_text(render_svg(points, result.frontier, x_label))
    return {"candidates": str(out / "candidates.csv"), "frontier": str(out / "frontier.csv"), "svg": str(out / "pareto.svg")}


def read_candidates_csv(path):
    """Rows of an exported table with parsed architecture, scheme and allocation."""
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append({
                "lat0": float(r["lat0"]),
                "latency_cycles": int(r["latency_cycles"]),
                "calibrated_ms": float(r["calibrated_ms"]) if r["calibrated_ms"] else None,
                "perturbation": float(r["perturbation"]),
                "predicted_acc": float(r["predicted_acc"]),
                "score": float(r["score"]),
                "arch": Architecture.from_json((path.parent / r["arch_path"]).read_text()),
                "quant": QuantScheme.parse(r["quant"]),
                "allocation": parse_allocations(r["allocation"]),
            })
    return rows


def render_svg(points: Sequence[ParetoPoint], frontier: Sequence[ParetoPoint], x_label: str = "latency",
               width: int = 640, height: int = 420) -> str:
    """Self-contained SVG: candidate scatter plus the frontier as a step line."""
    ml, mr, mt, mb = 70, 20, 20, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = [p.latency for p in points] or [0.0, 1.0]
    ys = [p.score for p in points] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
    ]
    for t in range(5):
        xv = x0 + (x1 - x0) * t / 4
        yv = y0 + (y1 - y0) * t / 4
        parts.append(f'<text x="{sx(xv):.1f}" y="{mt + ph + 16}" font-size="10" text-anchor="middle">{xv:.4g}</text>')
        parts.append(f'<text x="{ml - 6}" y="{sy(yv) + 3:.1f}" font-size="10" text-anchor="end">{yv:.4g}</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{height - 10}" font-size="12" text-anchor="middle">{x_label}</text>')
    parts.append(f'<text x="14" y="{mt + ph / 2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {mt + ph / 2})">score</text>')
    for p in points:
        parts.append(f'<circle cx="{sx(p.latency):.2f}" cy="{sy(p.score):.2f}" r="3" fill="#9aa5b1"/>')
    if frontier:
        coords = []
        for k, p in enumerate(frontier):
            if k:
                coords.append(f"{sx(p.latency):.2f},{sy(frontier[k - 1].score):.2f}")
            coords.append(f"{sx(p.latency):.2f},{sy(p.score):.2f}")
        parts.append(f'<polyline points="{" ".join(coords)}" fill="none" stroke="#c0392b" stroke-width="1.5"/>')
        for p in frontier:
            parts.append(f'<circle cx="{sx(p.latency):.2f}" cy="{sy(p.score):.2f}" r="4" fill="#c0392b"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --- config ----------------------------------------------------------------

def load_config(path, threads: int | None = None) -> PipelineConfig:
    """Read a pipeline TOML file; relative paths resolve against its directory.

    Top-level keys: ``seed_arch``, ``device`` (path or ``"zu3eg"``), ``model``,
    ``profile`` (optional), ``calibration`` (optional), ``lat0`` (list of
    cycle budgets), ``alpha``, ``lambda``, ``ranking``, ``top_k``, ``seed``,
    ``pool_limit``. Table ``[search]``: ``rollouts``, ``max_depth``,
    ``exploration_c``, ``n_trees``, ``channel_set``, ``resolution_set``,
    ``max_layers`` and ``actions`` (list of action names). Table ``[quant]``:
    ``act_bits``, ``bit_choices``, ``search_activations``,
    ``parallelism_set``, ``q_p``, ``q_s``.
    """
    from .resources import _read_toml

    path = Path(path)
    doc = _read_toml(path)
    base = path.parent

    def rel(key):
        return base / doc[key]

    device = doc.get("device", "zu3eg")
    budget = load_budget(device if device.lower() == "zu3eg" else base / device)
    calib = None
    if doc.get("calibration"):
        calib = Calibration.from_dict(json.loads(rel("calibration").read_text()))
    profile = load_profile(rel("profile")) if doc.get("profile") else None
    s = doc.get("search", {})
    q = doc.get("quant", {})
    n_threads = threads if threads is not None else int(doc.get("threads", os.cpu_count() or 1))
    settings = QuantSettings(
        act_bits=int(q.get("act_bits", 8)),
        search_activations=bool(q.get("search_activations", False)),
        bit_choices=tuple(q.get("bit_choices", BIT_CHOICES)),
        q_p=int(q.get("q_p", 24)),
        q_s=int(q.get("q_s", 16)),
        parallelism_set=tuple(q.get("parallelism_set", DEFAULT_PARALLELISM)),
        threads=1,
    )
    lat0 = doc.get("lat0")
    if not lat0:
        raise ValueError(f"{path}: 'lat0' must list at least one budget")
    return PipelineConfig(
        seed_arch=Architecture.from_json(rel("seed_arch").read_text()),
        budget=budget,
        predictor=SVRAccuracyPredictor.load(rel("model")),
        profile=profile,
        calibration=calib,
        lat0_list=tuple(float(x) for x in (lat0 if isinstance(lat0, list) else [lat0])),
        alpha=float(doc.get("alpha", 0.5)),
        lam=float(doc.get("lambda", 1.0)),
        ranking=str(doc.get("ranking", "score")),
        top_k=int(doc.get("top_k", 5)),
        seed=int(doc.get("seed", 0)),
        rollouts=int(s.get("rollouts", 200)),
        max_depth=int(s.get("max_depth", 30)),
        exploration_c=float(s.get("exploration_c", math.sqrt(2))),
        n_trees=int(s.get("n_trees", 1)),
        channel_set=tuple(s.get("channel_set", DEFAULT_CHANNEL_SET)),
        resolution_set=tuple(s.get("resolution_set", DEFAULT_RESOLUTION_SET)),
        max_layers=s.get("max_layers"),
        action_kinds=frozenset(ActionKind(a) for a in s.get("actions", [k.value for k in ActionKind])),
        pool_limit=doc.get("pool_limit"),
        quant=settings,
        threads=max(1, n_threads),
    )

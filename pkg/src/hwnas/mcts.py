"""Monte Carlo tree search over architectures.

:class:`MCTS` is a plain UCT search over any object exposing
``actions(state)``, ``step(state, action)``, ``is_terminal(action)`` and
``reward(state)``. :class:`ArchitectureSearchProblem` plugs in the
architecture edit actions and the latency-band reward, and records every
band-feasible architecture it evaluates.
"""
from __future__ import annotations

import enum
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple

from .arch import (
    DEFAULT_CHANNEL_SET,
    DEFAULT_RESOLUTION_SET,
    Architecture,
    LayerSpec,
    group_layers,
    validate,
)
from .exceptions import GroupingError
from .quant_solver import QuantSettings, band_holds, band_latencies
from .resources import HardwareBudget


class ActionKind(enum.Enum):
    INCREASE_CHANNEL = "increase_channel"
    DECREASE_CHANNEL = "decrease_channel"
    INCREASE_RESOLUTION = "increase_resolution"
    DECREASE_RESOLUTION = "decrease_resolution"
    SKIP_LAYER = "skip_layer"
    UNSKIP_LAYER = "unskip_layer"
    ADD_SUBGRAPH = "add_subgraph"
    DELETE_SUBGRAPH = "delete_subgraph"
    TERMINATE = "terminate"


class SearchAction(NamedTuple):
    kind: ActionKind
    layer: int | None = None

    def __str__(self):
        return self.kind.value if self.layer is None else f"{self.kind.value}({self.layer})"


TERMINATE = SearchAction(ActionKind.TERMINATE)


@dataclass
class SearchNode:
    state: Any
    depth: int = 0
    terminal: bool = False
    visit_count: int = 0
    value_sum: float = 0.0
    children: dict = field(default_factory=dict)
    untried: list | None = None

    @property
    def mean_value(self) -> float:
        return self.value_sum / self.visit_count if self.visit_count else 0.0


def uct_score(child: SearchNode, parent_visits: int, c: float = math.sqrt(2)) -> float:
    """Upper confidence bound of a child; unvisited children score +inf."""
    if child.visit_count == 0:
        return math.inf
    exploit = child.value_sum / child.visit_count
    if c == 0:
        return exploit
    return exploit + c * math.sqrt(math.log(parent_visits) / child.visit_count)


class MCTS:
    """UCT search: select, expand one untried action, random rollout, backpropagate."""

    def __init__(self, problem, root_state, exploration_c: float = math.sqrt(2), max_depth: int = 30, seed: int = 0):
        if exploration_c < 0:
            raise ValueError("exploration constant must be non-negative")
        self.problem = problem
        self.c = exploration_c
        self.max_depth = max_depth
        self.rng = random.Random(seed)
        self.root = SearchNode(root_state)
        self.rollouts = 0

    def _untried(self, node: SearchNode) -> list:
        if node.untried is None:
            node.untried = list(self.problem.actions(node.state))
        return node.untried

    def _select_child(self, node: SearchNode) -> SearchNode:
        best, best_score = None, -math.inf
        for child in node.children.values():
            s = uct_score(child, node.visit_count, self.c)
            if s > best_score:
                best, best_score = child, s
        return best

    def _simulate(self, node: SearchNode) -> float:
        state, depth = node.state, node.depth
        if not node.terminal:
            while depth < self.max_depth:
                actions = self.problem.actions(state)
                if not actions:
                    break
                a = actions[self.rng.randrange(len(actions))]
                if self.problem.is_terminal(a):
                    break
                state = self.problem.step(state, a)
                depth += 1
                self.problem.observe(state)
        return self.problem.reward(state)

    def rollout(self) -> float:
        node = self.root
        path = [node]
        while node.visit_count > 0 and not node.terminal and node.depth < self.max_depth:
            untried = self._untried(node)
            if untried:
                action = untried.pop(self.rng.randrange(len(untried)))
                child = SearchNode(
                    self.problem.step(node.state, action),
                    depth=node.depth + 1,
                    terminal=self.problem.is_terminal(action),
                )
                node.children[action] = child
                self.problem.observe(child.state)
                path.append(child)
                node = child
                break
            if not node.children:
                break
            node = self._select_child(node)
            path.append(node)
        if node is self.root and node.visit_count == 0:
            self.problem.observe(node.state)
        reward = self._simulate(node)
        for n in path:
            n.visit_count += 1
            n.value_sum += reward
        self.rollouts += 1
        return reward

    def run(self, n: int) -> "MCTS":
        for _ in range(n):
            self.rollout()
        return self

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children.values())


@dataclass(frozen=True)
class SearchConfig:
    lat0: float
    alpha: float = 0.5
    exploration_c: float = math.sqrt(2)
    max_rollouts: int = 1000
    max_depth: int = 30
    rng_seed: int = 0
    channel_set: tuple[int, ...] = DEFAULT_CHANNEL_SET
    resolution_set: tuple[int, ...] = DEFAULT_RESOLUTION_SET
    action_kinds: frozenset = frozenset(ActionKind)
    max_layers: int = 64
    n_trees: int = 1
    threads: int = 1
    quant: QuantSettings = QuantSettings()

    def __post_init__(self):
        if not self.exploration_c > 0:
            raise ValueError("exploration_c must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lat0 <= 0:
            raise ValueError("lat0 must be positive")
        object.__setattr__(self, "channel_set", tuple(sorted(self.channel_set)))
        object.__setattr__(self, "resolution_set", tuple(sorted(self.resolution_set)))
        object.__setattr__(self, "action_kinds", frozenset(ActionKind(k) for k in self.action_kinds))


def _propagate_channels(specs: list[LayerSpec], start: int) -> list[LayerSpec]:
    """Re-chain channels after layer ``start`` changed its output width.

    Depthwise and skipped layers pass their input width through, so the
    change ripples until the next full convolution.
    """
    for j in range(start + 1, len(specs)):
        s = specs[j]
        new_in = specs[j - 1].out_ch
        if s.kernel.is_depthwise or s.skipped:
            specs[j] = replace(s, in_ch=new_in, out_ch=new_in)
        else:
            specs[j] = replace(s, in_ch=new_in)
            break
    return specs


def _step_value(values: tuple, current: int, delta: int):
    if current not in values:
        return None
    i = values.index(current) + delta
    return values[i] if 0 <= i < len(values) else None


def apply_action(arch: Architecture, action: SearchAction, cfg: SearchConfig) -> Architecture | None:
    """Apply an edit; ``None`` when the action does not apply to this state."""
    kind, i = action.kind, action.layer
    specs = arch.specs()
    if kind in (ActionKind.INCREASE_CHANNEL, ActionKind.DECREASE_CHANNEL):
        s = specs[i]
        if s.skipped or s.kernel.is_depthwise:
            return None
        new = _step_value(cfg.channel_set, s.out_ch, 1 if kind is ActionKind.INCREASE_CHANNEL else -1)
        if new is None:
            return None
        specs[i] = replace(s, out_ch=new)
        return arch.with_layers(_propagate_channels(specs, i))
    if kind in (ActionKind.INCREASE_RESOLUTION, ActionKind.DECREASE_RESOLUTION):
        new = _step_value(cfg.resolution_set, arch.resolution, 1 if kind is ActionKind.INCREASE_RESOLUTION else -1)
        return None if new is None else arch.with_resolution(new)
    if kind is ActionKind.SKIP_LAYER:
        s = specs[i]
        if s.skipped:
            return None
        specs[i] = replace(s, skipped=True, out_ch=s.in_ch, stride=1)
        return arch.with_layers(_propagate_channels(specs, i))
    if kind is ActionKind.UNSKIP_LAYER:
        if not specs[i].skipped:
            return None
        specs[i] = replace(specs[i], skipped=False)
        return arch.with_layers(specs)
    if kind is ActionKind.ADD_SUBGRAPH:
        if arch.N + arch.template.M > cfg.max_layers:
            return None
        ch = specs[-1].out_ch if specs else cfg.channel_set[0]
        specs += [LayerSpec(k, ch, ch, 1, False) for k in arch.template.kernels]
        return arch.with_layers(specs)
    if kind is ActionKind.DELETE_SUBGRAPH:
        try:
            instances = group_layers(arch)
        except GroupingError:
            return None
        if len(instances) < 2:
            return None
        keep = min(instances[-1].layer_indices())
        return arch.with_layers(specs[:keep])
    if kind is ActionKind.TERMINATE:
        return arch
    raise ValueError(f"unknown action {action}")


class ArchitectureSearchProblem:
    """Architecture edits as an MCTS problem with a latency-band reward."""

    def __init__(self, cfg: SearchConfig, budget: HardwareBudget, profile=None, band_cache: dict | None = None):
        self.cfg = cfg
        self.budget = budget
        self.profile = profile
        self._actions: dict = {}
        # band latencies do not depend on lat0, so callers may share this across budgets
        self._band = band_cache if band_cache is not None else {}
        self.feasible: dict = {}  # insertion-ordered set of band-feasible states

    def _valid(self, arch: Architecture) -> bool:
        return not validate(arch, self.cfg.channel_set, self.cfg.resolution_set)

    def actions(self, arch: Architecture) -> list:
        cached = self._actions.get(arch)
        if cached is not None:
            return cached
        kinds = self.cfg.action_kinds
        candidates = []
        for kind in (ActionKind.INCREASE_CHANNEL, ActionKind.DECREASE_CHANNEL, ActionKind.SKIP_LAYER, ActionKind.UNSKIP_LAYER):
            if kind in kinds:
                candidates += [SearchAction(kind, i) for i in range(arch.N)]
        for kind in (
            ActionKind.INCREASE_RESOLUTION,
            ActionKind.DECREASE_RESOLUTION,
            ActionKind.ADD_SUBGRAPH,
            ActionKind.DELETE_SUBGRAPH,
        ):
            if kind in kinds:
                candidates.append(SearchAction(kind))
        legal = []
        for a in candidates:
            nxt = apply_action(arch, a, self.cfg)
            if nxt is not None and nxt != arch and self._valid(nxt):
                legal.append(a)
        if ActionKind.TERMINATE in kinds:
            legal.append(TERMINATE)
        self._actions[arch] = legal
        return legal

    def step(self, arch: Architecture, action: SearchAction) -> Architecture:
        nxt = apply_action(arch, action, self.cfg)
        if nxt is None:
            raise ValueError(f"illegal action {action}")
        return nxt

    @staticmethod
    def is_terminal(action: SearchAction) -> bool:
        return action.kind is ActionKind.TERMINATE

    def band(self, arch: Architecture):
        """``(L(A, 8bit), L(A, 2bit))`` with memoization; ``None`` entries are infeasible."""
        hit = self._band.get(arch)
        if hit is None:
            try:
                group_layers(arch)
                hit = band_latencies(arch, self.budget, self.cfg.quant)
            except GroupingError:
                hit = (None, None)
            self._band[arch] = hit
        return hit

    def reward(self, arch: Architecture) -> float:
        lat8, lat2 = self.band(arch)
        if lat8 is None or lat2 is None:
            return 0.0
        lat0, alpha = self.cfg.lat0, self.cfg.alpha
        if band_holds(lat8, lat2, lat0, alpha):
            return 1.0
        violation = max(0.0, (lat2 - lat0) / lat0) + max(0.0, (alpha * lat0 - lat8) / lat0)
        return 1.0 / (1.0 + violation)

    def observe(self, arch: Architecture) -> None:
        if arch in self.feasible:
            return
        lat8, lat2 = self.band(arch)
        if band_holds(lat8, lat2, self.cfg.lat0, self.cfg.alpha):
            self.feasible[arch] = (lat8, lat2)


def _run_tree(seed_arch, cfg, budget, profile, seed, band_cache=None):
    problem = ArchitectureSearchProblem(cfg, budget, profile, band_cache)
    tree = MCTS(problem, seed_arch, cfg.exploration_c, cfg.max_depth, seed)
    tree.run(cfg.max_rollouts)
    return tree, problem


def search(seed_arch: Architecture, cfg: SearchConfig, budget: HardwareBudget, profile=None) -> list[Architecture]:
    """Band-feasible architectures found by MCTS, deduplicated in discovery order.

    With ``cfg.n_trees > 1`` independent trees seeded ``rng_seed + t`` are run
    (in parallel when ``cfg.threads > 1``) and merged in tree order.
    """
    return [arch for arch, _ in search_with_band(seed_arch, cfg, budget, profile)]


def search_with_band(seed_arch, cfg: SearchConfig, budget, profile=None, band_cache: dict | None = None):
    """Like :func:`search` but pairs each architecture with ``(L8, L2)``.

    ``band_cache`` maps architectures to their band latencies and may be
    shared between searches on the same device and quantization settings.
    """
    seeds = [cfg.rng_seed + t for t in range(max(cfg.n_trees, 1))]
    if cfg.threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            runs = list(pool.map(lambda s: _run_tree(seed_arch, cfg, budget, profile, s, band_cache), seeds))
    else:
        runs = [_run_tree(seed_arch, cfg, budget, profile, s, band_cache) for s in seeds]
    merged: dict = {}
    for _, problem in runs:
        for arch, band in problem.feasible.items():
            merged.setdefault(arch, band)
    return list(merged.items())

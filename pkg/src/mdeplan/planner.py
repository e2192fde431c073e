"""Multi-model weighted A* with prioritized selection (PS) and prioritized expansion (PE).

Queue 0 is the anchor: it expands nodes fully, evaluating every action with the
fastest model whose precondition holds. Queue i > 0 expands partially: only
actions inside model i's precondition are evaluated now, the rest are parked on
the node (``a_inc``) for another queue to pick up.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import Skill, SkillAction, WorldState, action_to_record, sig6
from .mde import DeviationEstimator
from .world import (
    TaskName,
    TaskSpec,
    TransitionModel,
    build_models,
    edge_cost,
    generate_params,
    skill_precondition,
)

MdeTable = Mapping[tuple[Skill, str], DeviationEstimator]
StateKey = tuple


class Status(str, enum.Enum):
    FOUND = "Found"
    TIMEOUT = "Timeout"
    EXHAUSTED = "Exhausted"


@dataclass(frozen=True)
class PlannerConfig:
    epsilon: float = 5.0
    weights: tuple[float, ...] = (10.0, 1.0)
    d_max: Optional[Mapping[Skill, float]] = None  # falls back to the task's table
    time_budget: float = 300.0
    expansion_budget: int = 2000
    pos_resolution: float = 0.5
    yaw_resolution: float = 0.05
    drawer_resolution: float = 0.5
    seed: int = 0  # parameter-generation seed
    record_evaluations: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.epsilon < 1.0:
            raise ValueError("epsilon must be >= 1")
        if any(a < b for a, b in zip(self.weights, self.weights[1:])):
            raise ValueError("model preference weights must be non-increasing")
        if any(w <= 0 for w in self.weights):
            raise ValueError("model preference weights must be positive")


def default_planner_config(task_name: TaskName, **overrides) -> PlannerConfig:
    task_name = TaskName(task_name)
    if task_name is TaskName.ROD_IN_BOX:
        base = dict(epsilon=5.0, weights=(10.0, 1.0))
    else:
        base = dict(epsilon=10.0, weights=(10.0, 1.1, 1.0))
    base.update(overrides)
    return PlannerConfig(**base)


def state_key(s: WorldState, cfg: PlannerConfig) -> StateKey:
    """Discretized identity used for closed sets and the node table."""
    p, yr = cfg.pos_resolution, cfg.yaw_resolution

    def pose(q):
        return (round(q.x / p), round(q.y / p), round(q.yaw / yr))

    held = None if s.held is None else (s.held.rod_index, round(s.held.offset / p))
    return (pose(s.gripper), held, pose(s.rods[0]), pose(s.rods[1]), round(s.drawer_open / cfg.drawer_resolution))


def _derive_seed(base: int, key: StateKey, skill: Skill) -> int:
    digest = hashlib.blake2b(repr((int(base), key, skill.value)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def generate_actions(s: WorldState, key: StateKey, task: TaskSpec, cfg: PlannerConfig) -> list[SkillAction]:
    """All task skills' candidate actions whose skill precondition holds at ``s``.

    Seeds derive from the state key, so every search sees the same action set at a state.
    """
    out = []
    for skill in task.skills:
        for a in generate_params(s, skill, task, _derive_seed(cfg.seed, key, skill)):
            if skill_precondition(s, a):
                out.append(a)
    return out


# -- model selection --------------------------------------------------------

class ModelSelector:
    """Model preconditions from MDEs: (s, a) in pre(M_i) iff d_hat_i(s, a) < d_max(skill).

    With ``mdes=None`` every precondition holds.
    """

    def __init__(self, models: Sequence[TransitionModel], mdes: Optional[MdeTable], d_max: Mapping[Skill, float]):
        self.models = list(models)
        self.mdes = mdes
        self.d_max = d_max

    def in_pre(self, i: int, s: WorldState, a: SkillAction) -> bool:
        if self.mdes is None:
            return True
        est = self.mdes.get((a.skill, self.models[i].name))
        if est is None:
            return False
        return est.predict(s, a) < self.d_max[a.skill]

    def fastest(self, s: WorldState, a: SkillAction) -> Optional[int]:
        """Highest-index (fastest) model whose precondition holds, or None."""
        for i in range(len(self.models) - 1, -1, -1):
            if self.in_pre(i, s, a):
                return i
        return None

    def for_full_expansion(self, s: WorldState, a: SkillAction) -> Optional[int]:
        return self.fastest(s, a)


class SingleModelSelector(ModelSelector):
    def __init__(self, models: Sequence[TransitionModel], index: int):
        super().__init__(models, None, {})
        self.index = index

    def for_full_expansion(self, s, a):
        return self.index


class RandomModelSelector(ModelSelector):
    def __init__(self, models: Sequence[TransitionModel], seed: int):
        super().__init__(models, None, {})
        self.rng = np.random.default_rng([int(seed), 31337])

    def for_full_expansion(self, s, a):
        return int(self.rng.integers(len(self.models)))


@dataclass
class EvalCounters:
    n_models: int
    eval_cost: Sequence[float]
    per_model: list[int] = field(default_factory=list)
    weighted_cost: float = 0.0
    log: Optional[list] = None

    def __post_init__(self) -> None:
        self.per_model = [0] * self.n_models

    def record(self, i: int, key: StateKey, s: WorldState, a: SkillAction) -> None:
        self.per_model[i] += 1
        self.weighted_cost += self.eval_cost[i]
        if self.log is not None:
            self.log.append((key, s, a, i))


def _evaluate(models, i, key, s, a, counters) -> WorldState:
    if counters is not None:
        counters.record(i, key, s, a)
    return models[i].forward(s, a)


def full_expansion(s: WorldState, A: Sequence[SkillAction], models: Sequence[TransitionModel],
                   selector: ModelSelector, counters: Optional[EvalCounters] = None,
                   key: StateKey = ()) -> list[tuple[SkillAction, int, WorldState]]:
    """Evaluate every applicable action with the model the selector picks; no model, no edge."""
    out = []
    for a in A:
        if not skill_precondition(s, a):
            continue
        i = selector.for_full_expansion(s, a)
        if i is None:
            continue
        out.append((a, i, _evaluate(models, i, key, s, a, counters)))
    return out


def partial_expansion(s: WorldState, i: int, A: Sequence[SkillAction], models: Sequence[TransitionModel],
                      selector: ModelSelector, counters: Optional[EvalCounters] = None,
                      key: StateKey = ()) -> tuple[list[tuple[SkillAction, int, WorldState]], list[SkillAction]]:
    """Evaluate only actions in pre(M_i); return (successors, deferred actions).

    An evaluated action uses the fastest model whose precondition holds, which is
    M_i itself unless a faster model also covers it.
    """
    if i <= 0:
        raise ValueError("partial expansion is for queues i > 0")
    succ, deferred = [], []
    for a in A:
        if not skill_precondition(s, a):
            continue
        if selector.in_pre(i, s, a):
            j = selector.fastest(s, a)
            succ.append((a, j, _evaluate(models, j, key, s, a, counters)))
        else:
            deferred.append(a)
    return succ, deferred


def choose_queue(min_keys: Sequence[Optional[float]], weights: Sequence[float]) -> Optional[int]:
    """argmin_i w_i * min_f_i over nonempty queues; ties go to the larger (faster) index."""
    best, best_val = None, math.inf
    for i, k in enumerate(min_keys):
        if k is None:
            continue
        v = weights[i] * k
        if v <= best_val:
            best, best_val = i, v
    return best


# -- search -------------------------------------------------------------------

@dataclass
class PlanNode:
    key: StateKey
    state: WorldState
    g: float
    h: float
    parent: Optional[tuple[StateKey, SkillAction, int]] = None
    a_inc: list[SkillAction] = field(default_factory=list)
    generated: bool = False  # True once the node's action set has been produced

    def f(self, epsilon: float) -> float:
        return self.g + epsilon * self.h


class SearchState:
    def __init__(self, n_queues: int, epsilon: float):
        self.epsilon = epsilon
        self.open: list[list] = [[] for _ in range(n_queues)]
        self.closed: list[set] = [set() for _ in range(n_queues)]
        self.nodes: dict[StateKey, PlanNode] = {}
        self.expansions = 0
        self._seq = itertools.count()

    def push(self, i: int, node: PlanNode) -> None:
        # within a queue, ties on f go to the deeper node, then FIFO
        heapq.heappush(self.open[i], (node.f(self.epsilon), -node.g, next(self._seq), node.key))

    def _clean(self, i: int) -> None:
        q = self.open[i]
        while q:
            _, neg_g, _, key = q[0]
            if key in self.closed[i] or self.nodes[key].g != -neg_g:
                heapq.heappop(q)
            else:
                return

    def min_key(self, i: int) -> Optional[float]:
        self._clean(i)
        return self.open[i][0][0] if self.open[i] else None

    def min_keys(self) -> list[Optional[float]]:
        return [self.min_key(i) for i in range(len(self.open))]

    def pop(self, i: int) -> PlanNode:
        self._clean(i)
        return self.nodes[heapq.heappop(self.open[i])[3]]

    def close_all(self, key: StateKey) -> None:
        for c in self.closed:
            c.add(key)


@dataclass
class PlanResult:
    status: Status
    actions: list[SkillAction]
    predicted_states: list[WorldState]
    models_used: list[int]
    cost: float
    per_model_evals: dict[int, int]
    weighted_eval_cost: float
    wall_time: float
    expansions: int
    model_names: list[str]
    evaluations: Optional[list] = None

    @property
    def found(self) -> bool:
        return self.status is Status.FOUND

    def to_record(self, include_wall_time: bool = True) -> dict:
        rec = {
            "status": self.status.value,
            "actions": [action_to_record(a) for a in self.actions],
            "models_used": [self.model_names[i] for i in self.models_used],
            "cost": sig6(self.cost) if math.isfinite(self.cost) else None,
            "per_model_evals": {self.model_names[i]: n for i, n in sorted(self.per_model_evals.items())},
            "weighted_eval_cost": sig6(self.weighted_eval_cost),
            "expansions": self.expansions,
        }
        if include_wall_time:
            rec["wall_time"] = sig6(self.wall_time)
        return rec

    def dumps(self, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_record(include_wall_time), sort_keys=True, separators=(",", ":"))


def _path(search: SearchState, node: PlanNode):
    actions, states, used = [], [node.state], []
    while node.parent is not None:
        pkey, a, i = node.parent
        actions.append(a)
        used.append(i)
        node = search.nodes[pkey]
        states.append(node.state)
    return actions[::-1], states[::-1], used[::-1]


def _run(start: WorldState, task: TaskSpec, models: Sequence[TransitionModel], selector: ModelSelector,
         cfg: PlannerConfig, n_queues: int) -> PlanResult:
    t0 = time.perf_counter()
    weights = cfg.weights[:n_queues] if n_queues > 1 else (1.0,)
    if len(weights) != n_queues:
        raise ValueError(f"need {n_queues} model preference weights, got {len(cfg.weights)}")
    counters = EvalCounters(len(models), [m.eval_cost for m in models],
                            log=[] if cfg.record_evaluations else None)
    search = SearchState(n_queues, cfg.epsilon)
    key0 = state_key(start, cfg)
    root = PlanNode(key0, start, 0.0, task.heuristic(start))
    search.nodes[key0] = root
    for i in range(n_queues):
        search.push(i, root)

    def result(status: Status, node: Optional[PlanNode] = None) -> PlanResult:
        if node is not None:
            actions, states, used = _path(search, node)
            cost = node.g
        else:
            actions, states, used, cost = [], [], [], math.inf
        return PlanResult(
            status=status,
            actions=actions,
            predicted_states=states,
            models_used=used,
            cost=cost,
            per_model_evals=dict(enumerate(counters.per_model)),
            weighted_eval_cost=counters.weighted_cost,
            wall_time=time.perf_counter() - t0,
            expansions=search.expansions,
            model_names=[m.name for m in models],
            evaluations=counters.log,
        )

    while True:
        if search.expansions >= cfg.expansion_budget or time.perf_counter() - t0 > cfg.time_budget:
            return result(Status.TIMEOUT)
        i = choose_queue(search.min_keys(), weights)
        if i is None:
            return result(Status.EXHAUSTED)
        node = search.pop(i)
        if task.goal(node.state):
            return result(Status.FOUND, node)
        search.expansions += 1
        if node.generated:
            A = node.a_inc
        else:
            A = generate_actions(node.state, node.key, task, cfg)
            node.generated = True
        if i == 0:
            succ = full_expansion(node.state, A, models, selector, counters, node.key)
            node.a_inc = []
            search.close_all(node.key)
        else:
            succ, node.a_inc = partial_expansion(node.state, i, A, models, selector, counters, node.key)
            search.closed[i].add(node.key)

        for a, model_id, s2 in succ:
            key2 = state_key(s2, cfg)
            g2 = node.g + edge_cost(node.state, a, s2)
            child = search.nodes.get(key2)
            if child is None:
                child = PlanNode(key2, s2, g2, task.heuristic(s2), (node.key, a, model_id))
                search.nodes[key2] = child
            elif g2 < child.g and not all(key2 in c for c in search.closed):
                child.g, child.state, child.parent = g2, s2, (node.key, a, model_id)
                child.h = task.heuristic(s2)
            else:
                continue
            for q in range(n_queues):
                if key2 not in search.closed[q]:
                    search.push(q, child)


def _d_max(task: TaskSpec, cfg: PlannerConfig) -> Mapping[Skill, float]:
    table = dict(task.d_max)
    table.update(cfg.d_max or {})
    return table


def plan(start: WorldState, task: TaskSpec, models: Sequence[TransitionModel], mdes: Optional[MdeTable],
         cfg: PlannerConfig) -> PlanResult:
    """PS+PE: one queue per model, anchor at index 0."""
    return _run(start, task, models, ModelSelector(models, mdes, _d_max(task, cfg)), cfg, len(models))


def plan_ps_only(start: WorldState, task: TaskSpec, models: Sequence[TransitionModel],
                 mdes: Optional[MdeTable], cfg: PlannerConfig) -> PlanResult:
    """Anchor queue only, full expansions with prioritized selection."""
    return _run(start, task, models, ModelSelector(models, mdes, _d_max(task, cfg)), cfg, 1)


@dataclass(frozen=True)
class SingleModel:
    index: int


@dataclass(frozen=True)
class RandomModel:
    seed: int


def plan_baseline(start: WorldState, task: TaskSpec, mode, cfg: PlannerConfig,
                  models: Optional[Sequence[TransitionModel]] = None) -> PlanResult:
    """Single queue ignoring MDEs: one fixed model, or a uniformly random model per edge."""
    models = list(models) if models is not None else build_models(task.model_names)
    if isinstance(mode, SingleModel):
        selector: ModelSelector = SingleModelSelector(models, mode.index)
    elif isinstance(mode, RandomModel):
        selector = RandomModelSelector(models, mode.seed)
    else:
        raise ValueError(f"unknown baseline mode {mode!r}")
    return _run(start, task, models, selector, cfg, 1)


METHODS = ("ps_pe", "ps_only", "random", "sim_only", "analytical_only")


def solve(method: str, start: WorldState, task: TaskSpec, mdes: Optional[MdeTable] = None,
          cfg: Optional[PlannerConfig] = None, models: Optional[Sequence[TransitionModel]] = None,
          seed: int = 0) -> PlanResult:
    """Dispatch by method name over the task's ordered model list."""
    cfg = cfg or default_planner_config(task.name)
    models = list(models) if models is not None else build_models(task.model_names)
    if method == "ps_pe":
        return plan(start, task, models, mdes, cfg)
    if method == "ps_only":
        return plan_ps_only(start, task, models, mdes, cfg)
    if method == "random":
        return plan_baseline(start, task, RandomModel(seed), cfg, models)
    if method == "sim_only":
        return plan_baseline(start, task, SingleModel(_index(models, "fine_simulator")), cfg, models)
    if method == "analytical_only":
        return plan_baseline(start, task, SingleModel(_index(models, "analytical_pick_place")), cfg, models)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _index(models: Sequence[TransitionModel], name: str) -> int:
    for m in models:
        if m.name == name:
            return m.id
    raise ValueError(f"model {name} not in the model list")


# -- optimality oracle ---------------------------------------------------------

class OracleInfeasible(RuntimeError):
    """The exhaustive search ran out of budget; the instance is too big to certify."""


@dataclass
class OracleResult:
    cost: float
    states: list[WorldState]
    g_values: list[float]
    expansions: int


def oracle_search(start: WorldState, task: TaskSpec, models: Sequence[TransitionModel], mdes: Optional[MdeTable],
                  cfg: PlannerConfig, max_expansions: int = 20_000) -> OracleResult:
    """Dijkstra over the full-expansion edge set: an edge exists iff some model precondition holds."""
    selector = ModelSelector(models, mdes, _d_max(task, cfg))
    k0 = state_key(start, cfg)
    g = {k0: 0.0}
    rep = {k0: start}
    parent: dict = {k0: None}
    done: set = set()
    heap = [(0.0, 0, k0)]
    tie = itertools.count(1)
    expansions = 0
    while heap:
        gk, _, k = heapq.heappop(heap)
        if k in done or gk > g[k]:
            continue
        s = rep[k]
        if task.goal(s):
            states, gs = [], []
            while k is not None:
                states.append(rep[k])
                gs.append(g[k])
                k = parent[k]
            return OracleResult(gk, states[::-1], gs[::-1], expansions)
        done.add(k)
        expansions += 1
        if expansions > max_expansions:
            raise OracleInfeasible(f"oracle exceeded {max_expansions} expansions")
        for a in generate_actions(s, k, task, cfg):
            i = selector.fastest(s, a)
            if i is None:
                continue
            s2 = models[i].forward(s, a)
            k2 = state_key(s2, cfg)
            g2 = gk + edge_cost(s, a, s2)
            if k2 not in done and g2 < g.get(k2, math.inf):
                g[k2], rep[k2], parent[k2] = g2, s2, k
                heapq.heappush(heap, (g2, next(tie), k2))
    return OracleResult(math.inf, [], [], expansions)


def optimal_oracle(start: WorldState, task: TaskSpec, models: Sequence[TransitionModel], mdes: Optional[MdeTable],
                   cfg: PlannerConfig, max_expansions: int = 20_000) -> float:
    return oracle_search(start, task, models, mdes, cfg, max_expansions).cost

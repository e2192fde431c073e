"""Episode collection (plan, execute in ground truth, log) and train/val/test assembly."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    DEFAULT_SCENE,
    InvalidInputError,
    SceneConfig,
    Skill,
    SkillAction,
    Transition,
    WorldState,
    dumps_record,
    transition_from_record,
    transition_to_record,
)
from .mde import LabeledSet, TrainConfig, augment, label_transitions, to_labeled_set
from .planner import MdeTable, PlannerConfig, default_planner_config, solve
from .world import TaskName, TransitionModel, ground_truth, sample_instance, skill_precondition

log = logging.getLogger(__name__)


@dataclass
class EpisodeLog:
    episode_id: int
    task: TaskName
    seed: int
    planner: str
    transitions: list[Transition] = field(default_factory=list)
    reached_goal: bool = False

    def __post_init__(self) -> None:
        self.task = TaskName(self.task)
        for t0, t1 in zip(self.transitions, self.transitions[1:]):
            if t0.s_next != t1.s:
                raise InvalidInputError(f"episode {self.episode_id}: transitions do not chain at step {t1.step}")

    def header(self) -> dict:
        return {
            "kind": "episode",
            "episode_id": self.episode_id,
            "task": self.task.value,
            "seed": self.seed,
            "planner": self.planner,
            "n_transitions": len(self.transitions),
            "reached_goal": self.reached_goal,
        }


def execute(start: WorldState, actions: Sequence[SkillAction]) -> tuple[list[tuple[WorldState, SkillAction, WorldState]], WorldState]:
    """Run a plan open-loop in ground truth, stopping at the first action whose skill precondition fails."""
    steps = []
    s = start
    for a in actions:
        if not skill_precondition(s, a):
            break
        s2 = ground_truth(s, a)
        steps.append((s, a, s2))
        s = s2
    return steps, s


def run_episode(task_name: TaskName, seed: int, episode_id: int = 0, method: str = "random",
                mdes: Optional[MdeTable] = None, cfg: Optional[PlannerConfig] = None,
                scene: SceneConfig = DEFAULT_SCENE) -> EpisodeLog:
    """Sample an instance, plan with ``method``, execute in ground truth, log every step.

    The default planner draws a random model per edge, so the data covers all models.
    """
    start, task = sample_instance(task_name, seed, scene)
    cfg = cfg or default_planner_config(task.name)
    result = solve(method, start, task, mdes, cfg, seed=seed)
    ep = EpisodeLog(episode_id, task.name, seed, method)
    if not result.found:
        return ep
    steps, final = execute(start, result.actions)
    ep.transitions = [Transition(s, a, s2, episode_id, k) for k, (s, a, s2) in enumerate(steps)]
    ep.reached_goal = len(steps) == len(result.actions) and task.goal(final)
    return ep


def collect(counts: dict[TaskName, int], seed: int, method: str = "random",
            cfg_overrides: Optional[dict] = None, scene: SceneConfig = DEFAULT_SCENE) -> list[EpisodeLog]:
    """Episodes for each task in a fixed order; episode ``k`` uses seed ``seed + k``."""
    logs = []
    eid = 0
    for task_name in (TaskName.ROD_IN_BOX, TaskName.ROD_IN_DRAWER):
        cfg = default_planner_config(task_name, **(cfg_overrides or {}))
        for _ in range(counts.get(task_name, 0)):
            logs.append(run_episode(task_name, seed + eid, eid, method, None, cfg, scene))
            eid += 1
    return logs


# -- log files ----------------------------------------------------------------

def dumps_logs(logs: Iterable[EpisodeLog]) -> str:
    lines = []
    for ep in sorted(logs, key=lambda e: (e.seed, e.episode_id)):
        lines.append(dumps_record(ep.header()))
        lines.extend(dumps_record(transition_to_record(t)) for t in ep.transitions)
    return "".join(line + "\n" for line in lines)


def write_logs(logs: Iterable[EpisodeLog], path) -> None:
    Path(path).write_text(dumps_logs(logs))


def loads_logs(text: str, scene: SceneConfig = DEFAULT_SCENE) -> list[EpisodeLog]:
    logs: list[EpisodeLog] = []
    pending: Optional[dict] = None
    trans: list[Transition] = []

    def flush():
        if pending is None:
            return
        if len(trans) != pending["n_transitions"]:
            raise InvalidInputError(f"episode {pending['episode_id']}: expected {pending['n_transitions']} transitions")
        logs.append(EpisodeLog(pending["episode_id"], TaskName(pending["task"]), pending["seed"],
                               pending["planner"], list(trans), bool(pending["reached_goal"])))

    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            if rec.get("kind") == "episode":
                flush()
                pending, trans = rec, []
            else:
                if pending is None:
                    raise InvalidInputError("transition before any episode header")
                trans.append(transition_from_record(rec, scene))
        except (KeyError, ValueError, TypeError) as exc:
            raise InvalidInputError(f"line {lineno}: {exc}") from exc
    flush()
    return logs


def read_logs(path, scene: SceneConfig = DEFAULT_SCENE) -> list[EpisodeLog]:
    return loads_logs(Path(path).read_text(), scene)


# -- splits ---------------------------------------------------------------------

def split_episodes(logs: Sequence[EpisodeLog], test_fraction: float, seed: int) -> tuple[list[EpisodeLog], list[EpisodeLog]]:
    """Hold out whole episodes until the test set reaches ``test_fraction`` of all transitions."""
    nonempty = [ep for ep in logs if ep.transitions]
    if not nonempty:
        raise InvalidInputError("no transitions to split")
    if len(nonempty) == 1:
        warnings.warn("single episode: everything goes to train, test set is empty", stacklevel=2)
        return list(nonempty), []
    total = sum(len(ep.transitions) for ep in nonempty)
    target = test_fraction * total
    rng = np.random.default_rng([int(seed), 15])
    order = rng.permutation(len(nonempty))
    test_idx, n_test = set(), 0
    for j in order:
        n = len(nonempty[j].transitions)
        # take the episode if it brings the count closer to the target
        if abs(n_test + n - target) < abs(n_test - target):
            test_idx.add(int(j))
            n_test += n
    if len(test_idx) == len(nonempty):
        test_idx.discard(int(order[-1]))
    train = [ep for j, ep in enumerate(nonempty) if j not in test_idx]
    test = [ep for j, ep in enumerate(nonempty) if j in test_idx]
    return train, test


def transitions_of(logs: Iterable[EpisodeLog], skill: Optional[Skill] = None) -> list[Transition]:
    return [t for ep in logs for t in ep.transitions if skill is None or t.a.skill is skill]


@dataclass
class SplitData:
    train: LabeledSet
    val: LabeledSet
    test: LabeledSet


def build_dataset(logs: Sequence[EpisodeLog], model: TransitionModel, skill: Skill,
                  cfg: TrainConfig = TrainConfig(), seed: int = 0) -> SplitData:
    """Episode-level test hold-out, then augmentation of the rest, then a validation slice.

    The split depends only on the logs and seed, so every (skill, model) pair shares it.
    """
    if not logs or not any(ep.transitions for ep in logs):
        raise InvalidInputError("need at least one nonempty episode log")
    train_eps, test_eps = split_episodes(logs, cfg.test_fraction, seed)
    train = to_labeled_set(label_transitions(transitions_of(train_eps, skill), model), skill)
    test = to_labeled_set(label_transitions(transitions_of(test_eps, skill), model), skill)
    if len(train) == 0:
        return SplitData(train, LabeledSet.empty(skill), test)
    aug = augment(train, cfg, seed)
    rng = np.random.default_rng([int(seed), 5])
    perm = rng.permutation(len(aug))
    n_val = max(1, int(round(cfg.val_fraction * len(aug))))
    return SplitData(aug.take(np.sort(perm[n_val:])), aug.take(np.sort(perm[:n_val])), test)

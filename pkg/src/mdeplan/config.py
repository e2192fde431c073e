"""Flat dotted-key configuration (TOML syntax) for the command-line tools."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import tomli

from .core import SceneConfig, Skill
from .mde import TrainConfig
from .world import DEFAULT_EVAL_COST, TaskName


class ConfigError(ValueError):
    pass


PLANNER_COMMON = ("expansion_budget", "time_budget", "pos_resolution", "yaw_resolution", "drawer_resolution")
PLANNER_PER_TASK = ("epsilon", "weights", "samples_per_skill")


@dataclass
class AppConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    eval_cost: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_EVAL_COST))
    train: TrainConfig = field(default_factory=TrainConfig)
    planner_common: dict[str, Any] = field(default_factory=dict)
    planner_task: dict[TaskName, dict[str, Any]] = field(default_factory=dict)
    d_max: dict[TaskName, dict[Skill, float]] = field(default_factory=dict)
    collect_counts: dict[TaskName, int] = field(
        default_factory=lambda: {TaskName.ROD_IN_BOX: 26, TaskName.ROD_IN_DRAWER: 17})
    collect_method: str = "random"
    bench_instances: int = 10
    bench_methods: tuple[str, ...] = ("ps_pe", "ps_only", "random", "sim_only", "analytical_only")
    bench_tasks: tuple[TaskName, ...] = (TaskName.ROD_IN_BOX, TaskName.ROD_IN_DRAWER)
    verify_instances: int = 100
    verify_oracle_budget: int = 20_000

    def planner_overrides(self, task: TaskName) -> dict[str, Any]:
        out = dict(self.planner_common)
        out.update({k: v for k, v in self.planner_task.get(task, {}).items() if k != "samples_per_skill"})
        if task in self.d_max:
            out["d_max"] = dict(self.d_max[task])
        return out

    def task_kwargs(self, task: TaskName) -> dict[str, Any]:
        kw: dict[str, Any] = {}
        n = self.planner_task.get(task, {}).get("samples_per_skill")
        if n is not None:
            kw["samples_per_skill"] = int(n)
        if task in self.d_max:
            kw["d_max"] = dict(self.d_max[task])
        return kw


def flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _task(name: str) -> TaskName:
    try:
        return TaskName(name)
    except ValueError:
        raise ConfigError(f"unknown task {name!r}") from None


def from_flat(flat: dict[str, Any]) -> AppConfig:
    cfg = AppConfig()
    scene_fields = {f.name for f in dataclasses.fields(SceneConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    scene_kw: dict[str, Any] = {}
    train_kw: dict[str, Any] = {}
    for key, value in sorted(flat.items()):
        parts = key.split(".")
        head = parts[0]
        if head == "world" and len(parts) == 2 and parts[1] in scene_fields:
            scene_kw[parts[1]] = tuple(value) if isinstance(value, list) else value
        elif head == "world" and len(parts) == 3 and parts[1] == "eval_cost" and parts[2] in DEFAULT_EVAL_COST:
            cfg.eval_cost[parts[2]] = float(value)
        elif head == "mde" and len(parts) == 2 and parts[1] in train_fields:
            train_kw[parts[1]] = tuple(value) if isinstance(value, list) else value
        elif head == "planner" and len(parts) == 2 and parts[1] in PLANNER_COMMON:
            cfg.planner_common[parts[1]] = value
        elif head == "planner" and len(parts) == 3 and parts[2] in PLANNER_PER_TASK:
            val = tuple(float(v) for v in value) if parts[2] == "weights" else value
            cfg.planner_task.setdefault(_task(parts[1]), {})[parts[2]] = val
        elif head == "planner" and len(parts) == 4 and parts[2] == "d_max":
            try:
                skill = Skill(parts[3])
            except ValueError:
                raise ConfigError(f"unknown skill in {key}") from None
            cfg.d_max.setdefault(_task(parts[1]), {})[skill] = float(value)
        elif head == "collect" and len(parts) == 2 and parts[1] == "method":
            cfg.collect_method = str(value)
        elif head == "collect" and len(parts) == 2:
            n = int(value)
            if n < 0:
                raise ConfigError(f"{key} must be >= 0")
            cfg.collect_counts[_task(parts[1])] = n
        elif key == "bench.instances":
            cfg.bench_instances = int(value)
        elif key == "bench.methods":
            cfg.bench_methods = tuple(value)
        elif key == "bench.tasks":
            cfg.bench_tasks = tuple(_task(v) for v in value)
        elif key == "verify.instances":
            cfg.verify_instances = int(value)
        elif key == "verify.oracle_budget":
            cfg.verify_oracle_budget = int(value)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        cfg.scene = SceneConfig(**scene_kw)
        cfg.train = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def loads_config(text: str) -> AppConfig:
    try:
        tree = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return from_flat(flatten(tree))


def load_config(path: Optional[str | Path]) -> AppConfig:
    if path is None:
        return AppConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return loads_config(text)

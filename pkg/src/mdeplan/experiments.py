"""Experiment runners behind the CLI: MDE training, benchmarking, bound verification, reports."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import AppConfig
from .core import Skill
from .datagen import EpisodeLog, build_dataset, execute
from .mde import ExactDeviation, MdeModel, TrainConfig, mean_absolute_error, mde_filename, save_mde, train_mde
from .planner import (
    METHODS,
    MdeTable,
    OracleInfeasible,
    PlannerConfig,
    PlanResult,
    default_planner_config,
    oracle_search,
    plan,
    plan_ps_only,
    solve,
)
from .world import MODEL_NAMES, TASK_MODELS, TaskName, build_models, sample_instance

log = logging.getLogger(__name__)

BENCH_SEED_BASE = 1_000_000
VERIFY_SEED_BASE = 2_000_000


def bench_instance_seed(seed: int, k: int) -> int:
    # kept apart from collection seeds (seed + episode id) so benchmarks never replay training episodes
    return BENCH_SEED_BASE + 10_000 * int(seed) + k


def verify_instance_seed(seed: int, k: int) -> int:
    return VERIFY_SEED_BASE + 10_000 * int(seed) + k


def fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    return f"{x:.6g}"


# -- training -------------------------------------------------------------------

@dataclass
class MaeRow:
    skill: Skill
    model: str
    n_train: int
    n_test: int
    test_mae: float
    test_d_mean: float
    test_d_std: float


def train_all(logs: Sequence[EpisodeLog], train_cfg: TrainConfig, seed: int,
              eval_cost: Optional[dict] = None, out_dir: Optional[Path] = None,
              min_rows: int = 20) -> tuple[dict[tuple[Skill, str], MdeModel], list[MaeRow]]:
    """One MDE per (skill, model); pairs without enough data are skipped with a warning."""
    models = build_models(MODEL_NAMES, eval_cost)
    cfg = dataclasses.replace(train_cfg, seed=seed)
    out: dict[tuple[Skill, str], MdeModel] = {}
    rows: list[MaeRow] = []
    for skill in Skill:
        for m in models:
            data = build_dataset(logs, m, skill, cfg, seed)
            if len(data.train) < min_rows or len(data.val) == 0:
                log.warning("skipping %s/%s: only %d training rows", skill.value, m.name, len(data.train))
                continue
            mde = train_mde(data.train, cfg, data.val, m.name)
            out[(skill, m.name)] = mde
            if out_dir is not None:
                save_mde(mde, Path(out_dir) / mde_filename(skill, m.name))
            y = data.test.y
            rows.append(MaeRow(
                skill, m.name, len(data.train), len(y), mean_absolute_error(mde, data.test),
                float(y.mean()) if len(y) else float("nan"), float(y.std()) if len(y) else float("nan"),
            ))
    return out, rows


MAE_COLUMNS = ("skill", "model", "n_train", "n_test", "test_mae", "test_d_mean", "test_d_std")


def mae_csv(rows: Sequence[MaeRow]) -> str:
    lines = [",".join(MAE_COLUMNS)]
    for r in rows:
        lines.append(",".join([r.skill.value, r.model, str(r.n_train), str(r.n_test),
                               fmt(r.test_mae), fmt(r.test_d_mean), fmt(r.test_d_std)]))
    return "\n".join(lines) + "\n"


def mae_table(rows: Sequence[MaeRow]) -> str:
    lines = [f"{'Skill':<12} {'Model':<22} {'MDE MAE':>8} {'d mean (std)':>16}"]
    for r in rows:
        lines.append(f"{r.skill.value:<12} {r.model:<22} {r.test_mae:8.2f} {r.test_d_mean:8.2f} ({r.test_d_std:.2f})")
    return "\n".join(lines)


# -- benchmark ------------------------------------------------------------------

@dataclass
class InstanceRow:
    task: TaskName
    method: str
    index: int
    seed: int
    result: PlanResult
    executed_success: bool

    @property
    def evals(self) -> dict[str, int]:
        r = self.result
        return {r.model_names[i]: n for i, n in r.per_model_evals.items()}


def planner_config(app: AppConfig, task: TaskName, **extra) -> PlannerConfig:
    kw = app.planner_overrides(task)
    kw.update(extra)
    return default_planner_config(task, **kw)


def run_benchmark(app: AppConfig, mdes: Optional[MdeTable], methods: Sequence[str], tasks: Sequence[TaskName],
                  n_instances: int, seed: int, record_evaluations: bool = False) -> list[InstanceRow]:
    """Every method on the same seeded instances; found plans are executed in ground truth."""
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    rows = []
    for task_name in tasks:
        task_name = TaskName(task_name)
        cfg = planner_config(app, task_name, record_evaluations=record_evaluations)
        for k in range(n_instances):
            iseed = bench_instance_seed(seed, k)
            start, task = sample_instance(task_name, iseed, app.scene, **app.task_kwargs(task_name))
            models = build_models(task.model_names, app.eval_cost)
            for method in methods:
                res = solve(method, start, task, mdes, cfg, models, seed=iseed)
                ok = False
                if res.found:
                    steps, final = execute(start, res.actions)
                    ok = len(steps) == len(res.actions) and task.goal(final)
                rows.append(InstanceRow(task_name, method, k, iseed, res, ok))
    rows.sort(key=lambda r: (r.task.value, r.method, r.seed))
    return rows


SUMMARY_COLUMNS = (
    "task", "method", "instances", "plan_found_rate", "execution_success_rate", "weighted_eval_cost_mean",
    "evals_fine_simulator_mean", "evals_analytical_drawer_mean", "evals_analytical_pick_place_mean",
    "cost_mean_found", "expansions_mean",
)
INSTANCE_COLUMNS = (
    "task", "method", "instance", "seed", "status", "executed_success", "cost", "weighted_eval_cost",
    "evals_fine_simulator", "evals_analytical_drawer", "evals_analytical_pick_place", "expansions",
)
TIMING_COLUMNS = ("task", "method", "instance", "seed", "wall_time_s")


@dataclass
class SummaryRow:
    task: TaskName
    method: str
    instances: int
    plan_found_rate: float
    execution_success_rate: float
    weighted_eval_cost_mean: float
    evals_mean: dict[str, float] = field(default_factory=dict)
    cost_mean_found: float = float("nan")
    expansions_mean: float = 0.0
    wall_time_mean: float = 0.0


def summarize(rows: Sequence[InstanceRow]) -> list[SummaryRow]:
    groups: dict[tuple[str, str], list[InstanceRow]] = {}
    for r in rows:
        groups.setdefault((r.task.value, r.method), []).append(r)
    out = []
    for (task, method), rs in sorted(groups.items()):
        found = [r for r in rs if r.result.found]
        out.append(SummaryRow(
            task=TaskName(task),
            method=method,
            instances=len(rs),
            plan_found_rate=len(found) / len(rs),
            execution_success_rate=sum(r.executed_success for r in rs) / len(rs),
            weighted_eval_cost_mean=float(np.mean([r.result.weighted_eval_cost for r in rs])),
            evals_mean={name: float(np.mean([r.evals.get(name, 0) for r in rs])) for name in MODEL_NAMES},
            cost_mean_found=float(np.mean([r.result.cost for r in found])) if found else float("nan"),
            expansions_mean=float(np.mean([r.result.expansions for r in rs])),
            wall_time_mean=float(np.mean([r.result.wall_time for r in rs])),
        ))
    return out


def summary_csv(summary: Sequence[SummaryRow]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for s in summary:
        lines.append(",".join([
            s.task.value, s.method, str(s.instances), fmt(s.plan_found_rate), fmt(s.execution_success_rate),
            fmt(s.weighted_eval_cost_mean), *(fmt(s.evals_mean[n]) for n in MODEL_NAMES),
            fmt(s.cost_mean_found), fmt(s.expansions_mean),
        ]))
    return "\n".join(lines) + "\n"


def instances_csv(rows: Sequence[InstanceRow]) -> str:
    lines = [",".join(INSTANCE_COLUMNS)]
    for r in rows:
        ev = r.evals
        lines.append(",".join([
            r.task.value, r.method, str(r.index), str(r.seed), r.result.status.value, str(int(r.executed_success)),
            fmt(r.result.cost), fmt(r.result.weighted_eval_cost), *(str(ev.get(n, 0)) for n in MODEL_NAMES),
            str(r.result.expansions),
        ]))
    return "\n".join(lines) + "\n"


def timing_csv(rows: Sequence[InstanceRow]) -> str:
    lines = [",".join(TIMING_COLUMNS)]
    for r in rows:
        lines.append(",".join([r.task.value, r.method, str(r.index), str(r.seed), fmt(r.result.wall_time)]))
    return "\n".join(lines) + "\n"


def summary_table(summary: Sequence[SummaryRow]) -> str:
    head = f"{'task':<12} {'method':<16} {'found':>6} {'success':>8} {'w.eval cost':>12} {'plan time s':>12}"
    lines = [head]
    for s in summary:
        lines.append(f"{s.task.value:<12} {s.method:<16} {s.plan_found_rate:6.2f} {s.execution_success_rate:8.2f} "
                     f"{s.weighted_eval_cost_mean:12.1f} {s.wall_time_mean:12.4f}")
    return "\n".join(lines)


# -- suboptimality bounds -------------------------------------------------------------

@dataclass
class BoundRow:
    seed: int
    optimal_cost: float
    ps_only_cost: float
    ps_pe_cost: float

    @property
    def ps_only_ratio(self) -> float:
        return _ratio(self.ps_only_cost, self.optimal_cost)

    @property
    def ps_pe_ratio(self) -> float:
        return _ratio(self.ps_pe_cost, self.optimal_cost)


def _ratio(cost: float, opt: float) -> float:
    if opt == 0.0:
        return 1.0 if cost == 0.0 else math.inf
    return cost / opt


@dataclass
class BoundsReport:
    epsilon: float
    ps_only_bound: float
    ps_pe_bound: float
    rows: list[BoundRow]
    skipped: list[int]

    @property
    def violations(self) -> list[tuple[int, str]]:
        """Finished searches whose cost exceeds the bound (the bounds only cover terminated searches)."""
        out = []
        for r in self.rows:
            if math.isfinite(r.ps_only_cost) and r.ps_only_ratio > self.ps_only_bound * (1 + 1e-9):
                out.append((r.seed, "ps_only"))
            if math.isfinite(r.ps_pe_cost) and r.ps_pe_ratio > self.ps_pe_bound * (1 + 1e-9):
                out.append((r.seed, "ps_pe"))
        return out

    @property
    def unfinished(self) -> list[tuple[int, str]]:
        out = []
        for r in self.rows:
            out += [(r.seed, m) for m, c in (("ps_only", r.ps_only_cost), ("ps_pe", r.ps_pe_cost)) if not math.isfinite(c)]
        return out

    def max_ratio(self, method: str) -> float:
        vals = [r.ps_only_ratio if method == "ps_only" else r.ps_pe_ratio for r in self.rows]
        vals = [v for v in vals if math.isfinite(v)]
        return max(vals) if vals else float("nan")

    def csv(self) -> str:
        lines = ["seed,optimal_cost,ps_only_cost,ps_pe_cost,ps_only_ratio,ps_pe_ratio"]
        for r in self.rows:
            lines.append(",".join([str(r.seed), fmt(r.optimal_cost), fmt(r.ps_only_cost), fmt(r.ps_pe_cost),
                                   fmt(r.ps_only_ratio), fmt(r.ps_pe_ratio)]))
        return "\n".join(lines) + "\n"


def verify_bounds(app: AppConfig, mdes: Optional[MdeTable], n_instances: int, seed: int,
                  task_name: TaskName = TaskName.ROD_IN_BOX, cfg: Optional[PlannerConfig] = None,
                  oracle_budget: Optional[int] = None, max_attempts: Optional[int] = None) -> BoundsReport:
    """Compare PS-only and PS+PE costs with the exhaustive optimum on oracle-feasible instances.

    Without trained MDEs the exact deviation (ground truth vs model) stands in for them.
    Instances the oracle cannot finish within its budget are skipped and reported.
    """
    task_name = TaskName(task_name)
    cfg = cfg or planner_config(app, task_name)
    budget = oracle_budget or app.verify_oracle_budget
    rows, skipped = [], []
    k = 0
    limit = max_attempts if max_attempts is not None else 3 * n_instances
    while len(rows) < n_instances and k < limit:
        iseed = verify_instance_seed(seed, k)
        k += 1
        start, task = sample_instance(task_name, iseed, app.scene, **app.task_kwargs(task_name))
        models = build_models(task.model_names, app.eval_cost)
        table = mdes if mdes is not None else {(s, m.name): ExactDeviation(m) for s in task.skills for m in models}
        try:
            opt = oracle_search(start, task, models, table, cfg, budget)
        except OracleInfeasible:
            skipped.append(iseed)
            continue
        if not math.isfinite(opt.cost):
            skipped.append(iseed)  # unsolvable under the model preconditions
            continue
        a = plan_ps_only(start, task, models, table, cfg)
        b = plan(start, task, models, table, cfg)
        rows.append(BoundRow(iseed, opt.cost, a.cost, b.cost))
    weights = cfg.weights[: len(TASK_MODELS[task_name])]
    return BoundsReport(cfg.epsilon, cfg.epsilon, weights[0] / min(weights) * cfg.epsilon, rows, skipped)

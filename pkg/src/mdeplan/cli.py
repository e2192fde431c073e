"""Command-line entry point: collect, train, bench, verify-bounds, plan.

Exit codes: 0 success, 1 a checked bound was violated, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import AppConfig, ConfigError, load_config
from .core import InvalidInputError, dumps_record
from .datagen import collect, read_logs, write_logs
from .experiments import (
    instances_csv,
    mae_csv,
    mae_table,
    planner_config,
    run_benchmark,
    summarize,
    summary_csv,
    summary_table,
    timing_csv,
    train_all,
    verify_bounds,
)
from .mde import load_mde_dir
from .planner import METHODS, solve
from .world import TASK_MODELS, TASK_SKILLS, TaskName, build_models, sample_instance

log = logging.getLogger("mdeplan")


class UsageError(Exception):
    pass


def _tasks(arg: Optional[str], default) -> tuple[TaskName, ...]:
    if not arg:
        return tuple(default)
    try:
        return tuple(TaskName(t.strip()) for t in arg.split(",") if t.strip())
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _methods(arg: Optional[str], default) -> tuple[str, ...]:
    methods = tuple(m.strip() for m in arg.split(",") if m.strip()) if arg else tuple(default)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return methods


def _load_mdes(path: Optional[str], required: bool):
    if path is None:
        if required:
            raise UsageError("--mdes is required for MDE-based methods")
        return None
    d = Path(path)
    if not d.is_dir():
        raise UsageError(f"MDE directory {d} does not exist")
    try:
        mdes = load_mde_dir(d)
    except (InvalidInputError, ValueError, OSError) as exc:
        raise UsageError(f"bad MDE weight file: {exc}") from exc
    if required and not mdes:
        raise UsageError(f"no MDE weight files in {d}")
    return mdes


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_collect(args, app: AppConfig) -> int:
    logs = collect(app.collect_counts, args.seed, app.collect_method, None, app.scene)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_logs(logs, out)
    by_task = {t: [e for e in logs if e.task is t] for t in TaskName}
    for t, eps in by_task.items():
        n = sum(len(e.transitions) for e in eps)
        print(f"{t.value}: {len(eps)} episodes, {n} transitions, {sum(e.reached_goal for e in eps)} reached goal")
    print(f"wrote {out}")
    return 0


def cmd_train(args, app: AppConfig) -> int:
    try:
        logs = read_logs(args.logs, app.scene)
    except (InvalidInputError, OSError) as exc:
        raise UsageError(f"cannot read episode logs: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        mdes, rows = train_all(logs, app.train, args.seed, app.eval_cost, out)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from exc
    _write(out / "mae.csv", mae_csv(rows))
    print(mae_table(rows))
    print(f"wrote {len(mdes)} weight files to {out}")
    return 0


def cmd_bench(args, app: AppConfig) -> int:
    methods = _methods(args.methods, app.bench_methods)
    tasks = _tasks(args.task, app.bench_tasks)
    needs_mde = any(m in ("ps_pe", "ps_only") for m in methods)
    mdes = _load_mdes(args.mdes, needs_mde)
    if needs_mde:
        missing = [(s.value, m) for t in tasks for s in TASK_SKILLS[t] for m in TASK_MODELS[t]
                   if (s, m) not in mdes]
        if missing:
            raise UsageError(f"missing MDE weights for {missing}")
    n = args.instances if args.instances is not None else app.bench_instances
    rows = run_benchmark(app, mdes, methods, tasks, n, args.seed)
    summary = summarize(rows)
    out = Path(args.out)
    _write(out, summary_csv(summary))
    _write(out.with_name(out.stem + "_instances.csv"), instances_csv(rows))
    _write(out.with_name(out.stem + ".timing.csv"), timing_csv(rows))
    print(summary_table(summary))
    print(f"wrote {out}")
    return 0


def cmd_verify_bounds(args, app: AppConfig) -> int:
    mdes = _load_mdes(args.mdes, False)
    n = args.instances if args.instances is not None else app.verify_instances
    task = _tasks(args.task, (TaskName.ROD_IN_BOX,))
    if len(task) != 1:
        raise UsageError("verify-bounds takes a single --task")
    report = verify_bounds(app, mdes, n, args.seed, task[0])
    if args.out:
        _write(Path(args.out), report.csv())
    print(f"instances checked: {len(report.rows)} (skipped as oracle-infeasible: {len(report.skipped)})")
    print(f"ps_only: max cost ratio {report.max_ratio('ps_only'):.4f}, bound {report.ps_only_bound:g}")
    print(f"ps_pe:   max cost ratio {report.max_ratio('ps_pe'):.4f}, bound {report.ps_pe_bound:g}")
    if report.unfinished:
        print(f"searches that did not finish: {report.unfinished}")
    if report.violations:
        for seed, method in report.violations:
            print(f"VIOLATION: {method} on instance seed {seed}", file=sys.stderr)
        return 1
    if len(report.rows) < n:
        print(f"only {len(report.rows)} of {n} instances were oracle-feasible", file=sys.stderr)
        return 1
    return 0


def cmd_plan(args, app: AppConfig) -> int:
    task_name = _tasks(args.task, (TaskName.ROD_IN_BOX,))[0]
    method = _methods(args.methods, ("ps_pe",))[0]
    mdes = _load_mdes(args.mdes, method in ("ps_pe", "ps_only"))
    start, task = sample_instance(task_name, args.seed, app.scene, **app.task_kwargs(task_name))
    models = build_models(task.model_names, app.eval_cost)
    res = solve(method, start, task, mdes, planner_config(app, task_name), models, seed=args.seed)
    text = dumps_record(res.to_record(include_wall_time=False))
    if args.out:
        _write(Path(args.out), text + "\n")
    print(json.dumps(res.to_record(), indent=2, sort_keys=True))
    return 0 if res.found else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdeplan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="TOML file with dotted keys (world.*, mde.*, planner.*, bench.*, collect.*)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=out_required)

    sp = sub.add_parser("collect", help="plan and execute episodes, write a transition log")
    common(sp)
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("train", help="fit one MDE per (skill, model) from a transition log")
    common(sp)
    sp.add_argument("--logs", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("bench", help="compare planners on seeded instances")
    common(sp)
    sp.add_argument("--mdes", help="directory of MDE weight files")
    sp.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    sp.add_argument("--instances", type=int)
    sp.add_argument("--task", help="comma-separated task names")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("verify-bounds", help="check plan costs against the exhaustive optimum")
    common(sp, out_required=False)
    sp.add_argument("--mdes", help="directory of MDE weight files (default: exact deviations)")
    sp.add_argument("--instances", type=int)
    sp.add_argument("--task")
    sp.set_defaults(func=cmd_verify_bounds)

    sp = sub.add_parser("plan", help="plan one seeded instance and print the result")
    common(sp, out_required=False)
    sp.add_argument("--mdes")
    sp.add_argument("--methods", help="planner method (first entry is used)")
    sp.add_argument("--task")
    sp.set_defaults(func=cmd_plan)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 2
    try:
        app = load_config(args.config)
        if getattr(args, "instances", None) is not None and args.instances < 0:
            raise UsageError("--instances must be non-negative")
        return args.func(args, app)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

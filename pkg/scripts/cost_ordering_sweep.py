"""Repeat the 10-instance planning-cost comparison over many seed blocks.

Reports, per task, how often each pairwise ordering of mean weighted evaluation cost
holds, so the sensitivity of the single-block comparison can be judged.

Usage: python3 scripts/cost_ordering_sweep.py [--blocks 20] [--instances 10] [--mdes DIR]
"""

import argparse
from pathlib import Path

import numpy as np

from mdeplan.config import AppConfig
from mdeplan.datagen import collect, dumps_logs, loads_logs
from mdeplan.experiments import run_benchmark, summarize, train_all
from mdeplan.mde import load_mde_dir
from mdeplan.world import TaskName

PAIRS = {
    TaskName.ROD_IN_BOX: [("ps_pe", "ps_only"), ("ps_only", "random"), ("ps_only", "sim_only"), ("ps_pe", "random")],
    TaskName.ROD_IN_DRAWER: [("ps_pe", "sim_only"), ("ps_only", "sim_only"), ("ps_pe", "ps_only")],
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--blocks", type=int, default=20)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--mdes", help="trained MDE directory (default: collect and train with seed 0)")
    args = p.parse_args()
    app = AppConfig()
    if args.mdes:
        mdes = load_mde_dir(Path(args.mdes))
    else:
        logs = loads_logs(dumps_logs(collect(app.collect_counts, 0, app.collect_method, None, app.scene)))
        mdes, _ = train_all(logs, app.train, 0, app.eval_cost)

    for task, pairs in PAIRS.items():
        means = {m: [] for m in app.bench_methods}
        for block in range(args.blocks):
            rows = run_benchmark(app, mdes, app.bench_methods, (task,), args.instances, block)
            for s in summarize(rows):
                means[s.method].append(s.weighted_eval_cost_mean)
        print(f"\n{task.value}: {args.blocks} blocks of {args.instances} instances")
        for m, v in means.items():
            print(f"  {m:<16} mean weighted eval cost {np.mean(v):9.1f}  (block sd {np.std(v):8.1f})")
        for a, b in pairs:
            wins = sum(x < y for x, y in zip(means[a], means[b]))
            print(f"  {a} < {b}: {wins}/{args.blocks} blocks")


if __name__ == "__main__":
    main()

"""Collect episodes, train MDEs, benchmark all planners and check the cost bounds.

Usage: python3 scripts/run_pipeline.py [--out results] [--seed 0] [--instances 10] [--config file.toml]
"""

import argparse
import sys
from pathlib import Path

from mdeplan.cli import main as cli


def run(argv):
    print("$ mdeplan " + " ".join(argv), flush=True)
    code = cli(argv)
    if code not in (0,):
        sys.exit(f"mdeplan {argv[0]} exited with {code}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--config")
    args = p.parse_args()
    out = Path(args.out)
    common = ["--seed", str(args.seed)] + (["--config", args.config] if args.config else [])
    run(["collect", "--out", str(out / "episodes.jsonl")] + common)
    run(["train", "--logs", str(out / "episodes.jsonl"), "--out", str(out / "mdes")] + common)
    run(["bench", "--mdes", str(out / "mdes"), "--instances", str(args.instances),
         "--out", str(out / "bench.csv")] + common)
    run(["verify-bounds", "--mdes", str(out / "mdes"), "--out", str(out / "bounds.csv")] + common)


if __name__ == "__main__":
    main()

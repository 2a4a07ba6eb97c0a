#!/usr/bin/env python3
"""End-to-end desk experiment: generate data, train, evaluate, rank.

Example:
  python3 scripts/run_synthetic_experiment.py --schema dmer --out-dir runs/demo \
      --subjects 8 --trials 16 --epochs 30
"""

import argparse
import os
import sys

from helo.cli import run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--schema", default="dmer", choices=["dmer", "wesad"])
    ap.add_argument("--subjects", type=int, default=8)
    ap.add_argument("--trials", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--split", default="subject-dependent",
                    choices=["subject-dependent", "loso"])
    ap.add_argument("--out-dir", required=True)
    args = ap.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    data = os.path.join(args.out_dir, "data.jsonl")
    code = run([
        "generate", "--schema", args.schema, "--subjects", str(args.subjects),
        "--trials", str(args.trials), "--seed", str(args.seed), "--out", data,
    ])
    if code != 0:
        return code
    run_dir = os.path.join(args.out_dir, "train")
    code = run([
        "train", "--data", data, "--split", args.split, "--out-dir", run_dir,
        "--epochs", str(args.epochs), "--seed", str(args.seed),
    ])
    if code != 0:
        return code
    checkpoint = os.path.join(
        run_dir, "checkpoint.json" if args.split == "subject-dependent"
        else os.path.join("fold_00", "checkpoint.json")
    )
    eval_csv = os.path.join(args.out_dir, "evaluation.csv")
    code = run([
        "evaluate", "--checkpoint", checkpoint, "--data", data,
        "--out", eval_csv, "--method", "full",
    ])
    if code != 0:
        return code
    return run(["report", eval_csv, "--out", os.path.join(args.out_dir, "ranks.csv")])


if __name__ == "__main__":
    sys.exit(main())

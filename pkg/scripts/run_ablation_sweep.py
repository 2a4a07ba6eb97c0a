#!/usr/bin/env python3
"""Component and modality ablation sweep on a synthetic dataset.

Example:
  python3 scripts/run_ablation_sweep.py --schema wesad --out-dir runs/ablate \
      --subjects 10 --trials 20 --epochs 10
"""

import argparse
import os
import sys

from helo.cli import run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--schema", default="dmer", choices=["dmer", "wesad"])
    ap.add_argument("--subjects", type=int, default=10)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
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
    return run([
        "ablate", "--data", data, "--out", os.path.join(args.out_dir, "grid.csv"),
        "--epochs", str(args.epochs), "--seed", str(args.seed),
    ])


if __name__ == "__main__":
    sys.exit(main())

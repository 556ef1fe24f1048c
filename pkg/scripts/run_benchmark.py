#!/usr/bin/env python3
"""Run the frequency-perturbation benchmark and print the accuracy table.

Renders square and saw targets, perturbs the fundamental by +/-1 cent
(epsilon), +/-300 and +/-600 cents, and reports how often each loss
variant prefers the closer render.  Writes one CSV row per
(waveform, distance, transform, processing) cell.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from gradsynth.experiments import benchmark_table, export_csv


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("benchmark.csv"))
    args = parser.parse_args()

    t0 = time.time()
    rows = benchmark_table(trials=args.trials, seed=args.seed, jobs=args.jobs)
    export_csv(rows, args.out)

    print(f"{'waveform':8s} {'distance':>8s} {'transform':11s} {'processing':11s} accuracy")
    for row in rows:
        print(
            f"{row.waveform:8s} {row.distance:>8s} {row.transform:11s} "
            f"{row.processing:11s} {row.accuracy:.4f}"
        )
    print(f"\n{len(rows)} cells x {args.trials} trials in {time.time() - t0:.1f}s -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

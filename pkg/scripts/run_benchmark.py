"""Original vs hybrid vs logic on the reference synthetic benchmark.

Writes per-run metrics and the per-mode summary as JSON, and prints the
summary table plus the directional check (logic >= hybrid >= original in
consistency, logic - original >= 2 points, accuracy within 2 points).
"""

import argparse
import json
import sys
import time
from dataclasses import replace

from logicloss.benchmark import BenchmarkConfig, run_benchmark, summarize
from logicloss.metrics import format_table
from logicloss.trainer import TrainConfig


def directional_check(summary):
    o, h, l = (summary[m] for m in ("original", "hybrid", "logic"))
    return {
        "consistency_order": l["consistency"] >= h["consistency"] >= o["consistency"],
        "consistency_gain_2pt": l["consistency"] - o["consistency"] >= 0.02,
        "accuracy_within_2pt": abs(l["accuracy"] - o["accuracy"]) <= 0.02,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[41, 42, 43])
    ap.add_argument("--n-families", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    ap.add_argument("--beta", type=float, default=TrainConfig.beta)
    ap.add_argument("--out", default="benchmark.json")
    args = ap.parse_args(argv)

    bench = BenchmarkConfig(n_families=args.n_families, seeds=tuple(args.seeds),
                            train=replace(TrainConfig(), epochs=args.epochs, beta=args.beta))
    start = time.perf_counter()
    results = run_benchmark(bench, log=lambda m: print(m, flush=True))
    summary = summarize(results)
    check = directional_check(summary)
    elapsed = time.perf_counter() - start
    for seed in bench.seeds:
        print(f"\nseed {seed}")
        print(format_table({r.mode: r.report for r in results if r.seed == seed}))
    print("\nmean over seeds")
    for mode, row in summary.items():
        print(f"  {mode:8s} accuracy {row['accuracy']:.4f}  consistency {row['consistency']:.4f}  "
              f"distribution {row['distribution']:.4f}  train acc {row['train_answer_acc']:.4f}")
    print("directional check:", json.dumps(check), f"({elapsed:.0f}s)")
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"summary": summary, "check": check, "seconds": elapsed,
                   "runs": [{"mode": r.mode, "seed": r.seed, "train_answer_acc": r.train_answer_acc,
                             "seconds": r.seconds, **r.report.to_dict()} for r in results]}, fh, indent=2)
    return 0 if all(check.values()) else 1


if __name__ == "__main__":
    sys.exit(main())

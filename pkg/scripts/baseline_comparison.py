"""Proposed mechanism against fixed-reward and single-resource baselines (15 MUs, 3 ASPs)."""
import argparse
from pathlib import Path

import numpy as np

from qoe_incentive.baselines import Scheme
from qoe_incentive.harness import ExperimentSpec, run_experiment

SCHEMES = ("proposed", "ratio:1", "ratio:5", "token", "onlyf", "onlyb")
COLUMNS = ("avg_asp_cost", "avg_mu_cost", "f_usage_ratio", "b_usage_ratio")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/baselines"))
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    spec = ExperimentSpec(name="baselines", n_asps=3, n_mus=15, replicates=args.seeds,
                          schemes=tuple(Scheme.parse(s) for s in SCHEMES), out_dir=str(args.out))
    rec = run_experiment(spec, jobs=args.jobs)
    print(f"{'scheme':<10}" + "".join(f"{c:>15}" for c in COLUMNS))
    for p in rec.points:
        if p.error:
            print(f"{p.scheme:<10} failed: {p.error}")
            continue
        print(f"{p.scheme:<10}" + "".join(f"{p.metrics[c]:>15.5g}" for c in COLUMNS))
    ok = [p for p in rec.points if not p.error]
    best = min(ok, key=lambda p: np.mean([p.metrics["f_usage_ratio"], p.metrics["b_usage_ratio"]]))
    print(f"lowest combined usage: {best.scheme}")


if __name__ == "__main__":
    main()

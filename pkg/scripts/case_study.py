"""Two-ASP, three-MU case study: equilibrium rewards, allocations and QoE."""
import argparse
from pathlib import Path

from qoe_incentive.harness import ExperimentSpec, read_csv, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/case-study"))
    args = ap.parse_args()
    rec = run_experiment(ExperimentSpec(name="case-study", source="case-study", out_dir=str(args.out)))
    print(f"rounds {rec.points[0].summary['rounds']}, certified {rec.points[0].summary['certified']}")
    for row in read_csv(args.out / "case_study.csv"):
        print("  ".join(f"{k}={v}" for k, v in row.items()))


if __name__ == "__main__":
    main()

"""Average utilities as the market grows in MUs (3 ASPs) and in ASPs (10 MUs)."""
import argparse
from pathlib import Path

import numpy as np

from qoe_incentive.harness import ExperimentSpec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/scaling"))
    ap.add_argument("--replicates", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    runs = {
        "M": ExperimentSpec(name="scale-M", n_asps=3, sweep_var="M", sweep_values=(5, 10, 15, 20, 25)),
        "N": ExperimentSpec(name="scale-N", n_mus=10, sweep_var="N", sweep_values=(1, 2, 3, 4, 5)),
    }
    for var, spec in runs.items():
        spec.seed, spec.replicates, spec.out_dir = args.seed, args.replicates, str(args.out / var)
        rec = run_experiment(spec, jobs=args.jobs)
        mu = np.array(rec.series("proposed", "avg_mu_utility"))
        asp = np.array(rec.series("proposed", "avg_asp_utility"))
        print(f"{var} = {list(spec.sweep_values)}")
        print("  avg MU utility :", np.round(mu, 5).tolist())
        print("  avg ASP utility:", np.round(asp, 5).tolist())
        if var == "M":
            print(f"  MU band: {(mu.max() - mu.min()) / abs(mu.mean()):.2%}")


if __name__ == "__main__":
    main()

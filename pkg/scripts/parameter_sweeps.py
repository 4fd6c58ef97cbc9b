"""Parameter sweeps on the case-study market: accuracy, output tokens and latency tolerance."""
import argparse
from pathlib import Path

from qoe_incentive.harness import ExperimentSpec, run_experiment, trend_summary

SWEEPS = {
    "theta_hat": (1e-11, 1e-9, 1e-7, 1e-5, 1e-3),
    "x_out": (300, 600, 900, 1200, 1500),
    "kappa": (0.3, 0.6, 0.9, 1.2, 1.5),
}
SHOWN = ("reward[0,0]", "qoe[0,0]", "f[0,0]", "b[0,0]", "mu_utility[0]", "asp_utility[0]")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("out/sweeps"))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    for var, values in SWEEPS.items():
        spec = ExperimentSpec(name=f"sweep-{var}", source="case-study", sweep_var=var,
                              sweep_values=values, out_dir=str(args.out / var))
        rec = run_experiment(spec, jobs=args.jobs)
        trends = trend_summary(rec)
        print(f"{var}: " + ", ".join(f"{k} {trends[f'proposed/{k}']}" for k in SHOWN))


if __name__ == "__main__":
    main()

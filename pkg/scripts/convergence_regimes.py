"""Utility gap to a polished equilibrium under constant and diminishing step sizes."""
import argparse
import csv
from pathlib import Path

from qoe_incentive.harness import generate_scenario
from qoe_incentive.mu_game import (
    GameConfig,
    StepSchedule,
    first_round_below,
    neighborhood_envelope,
    reference_equilibrium,
    run_game,
    utility_gap_trajectory,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--delta", type=float, default=0.02)
    ap.add_argument("--u", type=float, default=0.1)
    ap.add_argument("--rounds", type=int, default=100)
    ap.add_argument("--out", type=Path, default=Path("out/convergence.csv"))
    args = ap.parse_args()
    s = generate_scenario(args.seed, 2, 3)
    ref = reference_equilibrium(s)
    common = dict(epsilon=0.0, certify=False)
    con = run_game(s, GameConfig(StepSchedule("constant", args.delta), max_rounds=args.rounds, **common))
    dim = run_game(s, GameConfig(StepSchedule("diminishing", args.u), max_rounds=10 * args.rounds, **common))
    g_con, g_dim = utility_gap_trajectory(s, con, ref), utility_gap_trajectory(s, dim, ref)
    env = neighborhood_envelope(s, args.delta)

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "gap_constant", "gap_diminishing"])
        for t in range(len(g_dim)):
            w.writerow([t, f"{g_con[t]:.9g}" if t < len(g_con) else "", f"{g_dim[t]:.9g}"])
    print(f"envelope {env:g}")
    print(f"constant:    final gap {g_con[-1]:.3e}, first below envelope at round {first_round_below(g_con, env)}")
    print(f"diminishing: final gap {g_dim[-1]:.3e}, first below envelope at round {first_round_below(g_dim, env)}")


if __name__ == "__main__":
    main()

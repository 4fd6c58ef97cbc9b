"""Command line entry point.

Exit codes: 0 success, 2 partial failure (some sweep points or checks
failed), 1 fatal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import PROPOSED, Scheme
from .config import DEFAULT_RANGES, dump_scenario, load_scenario
from .harness import (
    SWEEP_VARS,
    ExperimentSpec,
    generate_scenario,
    load_spec,
    parse_sweep_values,
    run_experiment,
)
from .mu_game import GameConfig, StepSchedule, run_game

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _game_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schedule", type=StepSchedule.parse, default=None,
                   help="diminishing:u or constant:delta")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--max-rounds", type=int, default=None)


def _game_from(args, base: GameConfig | None = None) -> GameConfig:
    game = base or GameConfig()
    changes = {}
    if args.schedule is not None:
        changes["schedule"] = args.schedule
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    if args.max_rounds is not None:
        changes["max_rounds"] = args.max_rounds
    return replace(game, **changes)


def _schemes(values) -> tuple[Scheme, ...]:
    return tuple(Scheme.parse(v) for v in values) if values else (PROPOSED,)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qoe-market", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment spec file")
    p.add_argument("spec", type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--scheme", action="append", default=None)
    p.add_argument("--override-ranges", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _game_args(p)

    p = sub.add_parser("case-study", help="solve the built-in two-ASP, three-MU case study")
    p.add_argument("--out", type=Path, default=Path("out/case-study"))
    p.add_argument("--scheme", action="append", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    _game_args(p)

    p = sub.add_parser("sweep", help="sweep one variable inline")
    p.add_argument("--var", required=True, choices=SWEEP_VARS)
    p.add_argument("--values", required=True, help="comma separated, unit suffixes allowed")
    p.add_argument("--source", choices=("generator", "case-study"), default=None)
    p.add_argument("--scenario", type=Path, default=None, help="scenario file instead of a generator")
    p.add_argument("--n-asps", type=int, default=2)
    p.add_argument("--n-mus", type=int, default=3)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out/sweep"))
    p.add_argument("--scheme", action="append", default=None)
    p.add_argument("--override-ranges", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _game_args(p)

    p = sub.add_parser("certify", help="run the game and certify an epsilon-NE (plus oracle checks)")
    p.add_argument("--scenario", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-asps", type=int, default=2)
    p.add_argument("--n-mus", type=int, default=3)
    p.add_argument("--out", type=Path, default=None)
    _game_args(p)

    p = sub.add_parser("gen", help="write a generated scenario file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-asps", type=int, default=2)
    p.add_argument("--n-mus", type=int, default=3)
    p.add_argument("--out", type=Path, required=True)
    return parser


def _finish(record) -> int:
    out = record.spec.out_dir
    status = "partial" if record.failures else "ok"
    print(f"{record.spec.name}: {len(record.points)} points, {len(record.failures)} failed, status {status}"
          + (f", outputs in {out}" if out else ""))
    for p in record.failures:
        print(f"  point {p.index} [{p.scheme}] sweep={p.sweep_value}: {p.error}", file=sys.stderr)
    return EXIT_PARTIAL if record.failures else EXIT_OK


def cmd_run(args) -> int:
    spec = load_spec(args.spec)
    changes = {"game": _game_from(args, spec.game)}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = str(args.out)
    if args.scheme:
        changes["schemes"] = _schemes(args.scheme)
    if args.override_ranges:
        changes["override_ranges"] = True
    spec = replace(spec, **changes)
    if spec.out_dir is None:
        spec.out_dir = str(Path("out") / spec.name)
    return _finish(run_experiment(spec, jobs=args.jobs))


def cmd_case_study(args) -> int:
    spec = ExperimentSpec(
        name="case-study",
        source="case-study",
        seed=args.seed,
        schemes=_schemes(args.scheme),
        game=_game_from(args),
        out_dir=str(args.out),
    )
    record = run_experiment(spec, jobs=args.jobs)
    code = _finish(record)
    base = next((p for p in record.points if p.table), None)
    if base is not None:
        print("asp mu  f[TFLOPS]  b[MHz]  reward   QoE[ms]")
        for row in base.table:
            print(f"{row['asp']:>3} {row['mu']:>2}  {row['f_tflops']:9.4f}  {row['b_mhz']:6.2f}  "
                  f"{row['reward']:.5f}  {row['qoe_ms']:7.2f}")
    return code


def cmd_sweep(args) -> int:
    if args.scenario is not None:
        source, path = "file", str(args.scenario)
    else:
        source, path = args.source or "generator", None
    spec = ExperimentSpec(
        name=f"sweep-{args.var}",
        source=source,
        scenario_file=path,
        seed=args.seed,
        n_asps=args.n_asps,
        n_mus=args.n_mus,
        replicates=args.replicates,
        sweep_var=args.var,
        sweep_values=parse_sweep_values(args.var, args.values),
        schemes=_schemes(args.scheme),
        game=_game_from(args),
        override_ranges=args.override_ranges,
        out_dir=str(args.out),
    )
    return _finish(run_experiment(spec, jobs=args.jobs))


def cmd_certify(args) -> int:
    from .asp_solver import best_response
    from .oracle import OracleSizeError, grid_best_response

    scenario = (load_scenario(args.scenario) if args.scenario
                else generate_scenario(args.seed, args.n_asps, args.n_mus, DEFAULT_RANGES))
    game = _game_from(args)
    report = run_game(scenario, game)
    cert = report.certification
    result = {
        "scenario": scenario.name,
        "rounds": report.rounds_used,
        "converged": report.converged,
        "epsilon": game.epsilon,
        "ne_certified": bool(cert.certified),
        "worst_gain": float(cert.worst_gain),
        "rewards": np.round(report.rewards, 9).tolist(),
        "oracle": [],
    }
    ok = bool(cert.certified)
    for n in range(scenario.n_asps):
        try:
            _, oracle_u = grid_best_response(scenario, n, report.rewards)
        except OracleSizeError as exc:
            result["oracle"].append({"asp": n, "skipped": str(exc)})
            continue
        solver_u = best_response(scenario, n, report.rewards, game.solver).utility
        passed = solver_u >= oracle_u - 0.01 * abs(oracle_u)
        ok &= passed
        result["oracle"].append({"asp": n, "solver": solver_u, "oracle": oracle_u, "pass": passed})
    text = json.dumps(result, indent=2)
    print(text)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n", encoding="utf-8")
    return EXIT_OK if ok else EXIT_PARTIAL


def cmd_gen(args) -> int:
    scenario = generate_scenario(args.seed, args.n_asps, args.n_mus, DEFAULT_RANGES)
    path = dump_scenario(scenario, args.out)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "case-study": cmd_case_study, "sweep": cmd_sweep,
            "certify": cmd_certify, "gen": cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())

"""Scenario generation, experiment sweeps and CSV output."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import metadata
from pathlib import Path

import numpy as np
import tomli

from .baselines import PROPOSED, Scheme, SchemeOutcome, run_scheme
from .config import (
    DEFAULT_CALIBRATION,
    DEFAULT_RANGES,
    Calibration,
    GeneratorRanges,
    calibration_from_dict,
    load_scenario,
    parse_quantity,
)
from .model import AspParams, Channel, Demand, DomainError, MuParams, Scenario
from .mu_game import GameConfig, StepSchedule

SWEEP_VARS = ("theta_hat", "x_out", "kappa", "M", "N")
_FIELD_CODES = {"kappa": 1, "f_max": 2, "b_max": 3, "k": 4, "x_in": 5, "x_out": 6, "snr": 7}


def _rng(seed: int, name: str, n: int, m: int) -> np.random.Generator:
    """Counter-style stream: one independent generator per (seed, field, n, m)."""
    ss = np.random.SeedSequence([int(seed), _FIELD_CODES[name], int(n), int(m)])
    return np.random.Generator(np.random.Philox(ss))


def generate_scenario(
    seed: int,
    n_asps: int,
    n_mus: int,
    ranges: GeneratorRanges = DEFAULT_RANGES,
    calibration: Calibration = DEFAULT_CALIBRATION,
) -> Scenario:
    """Uniform draws inside ``ranges``; every value depends only on (seed, field, n, m)."""
    if n_asps < 1 or n_mus < 1:
        raise DomainError("need at least one ASP and one MU")
    cal = calibration
    asps = []
    for n in range(n_asps):
        asps.append(AspParams(
            kappa=float(_rng(seed, "kappa", n, 0).uniform(*ranges.kappa)),
            xi=cal.xi,
            c_f=cal.c_f,
            c_b=cal.c_b,
            f_max=float(_rng(seed, "f_max", n, 0).uniform(*ranges.f_max)),
            b_max=float(_rng(seed, "b_max", n, 0).uniform(*ranges.b_max)),
        ))
    mus = [MuParams(cal.mu, cal.r_min, cal.r_max) for _ in range(n_mus)]
    demands, channels = [], []
    lo_tok, hi_tok = ranges.tokens
    for n in range(n_asps):
        d_row, c_row = [], []
        for m in range(n_mus):
            k = int(_rng(seed, "k", n, m).choice(ranges.k_values))
            d_row.append(Demand(
                theta_hat=cal.theta_for_k(k),
                x_in=int(_rng(seed, "x_in", n, m).integers(lo_tok, hi_tok + 1)),
                x_out=int(_rng(seed, "x_out", n, m).integers(lo_tok, hi_tok + 1)),
            ))
            c_row.append(Channel.from_db(float(_rng(seed, "snr", n, m).uniform(*ranges.snr_db))))
        demands.append(d_row)
        channels.append(c_row)
    return Scenario(asps, mus, demands, channels, seed, f"generated-{seed}-{n_asps}x{n_mus}")


# (theta_hat, x_out) per (ASP, MU) in the built-in case study
CASE_STUDY_DEMANDS = (
    ((1e-7, 200), (1e-9, 500), (1e-8, 800)),
    ((1e-5, 1400), (1e-7, 1200), (1e-8, 1000)),
)
CASE_STUDY_KAPPA = (0.5, 1.0)


def case_study_scenario(
    calibration: Calibration = DEFAULT_CALIBRATION,
    x_in: int = 2000,
    snr_db: float = 20.0,
    f_max: float = 10e12,
    b_max: float = 200e6,
    demands=CASE_STUDY_DEMANDS,
) -> Scenario:
    """Two ASPs and three MUs with personalised demands."""
    cal = calibration
    asps = [AspParams(k, cal.xi, cal.c_f, cal.c_b, f_max, b_max) for k in CASE_STUDY_KAPPA]
    mus = [MuParams(cal.mu, cal.r_min, cal.r_max) for _ in range(len(demands[0]))]
    grid = [[Demand(th, x_in, xo) for th, xo in row] for row in demands]
    ch = [[Channel.from_db(snr_db) for _ in row] for row in demands]
    return Scenario(asps, mus, grid, ch, None, "case-study")


def apply_sweep(base: Scenario, variable: str, value: float, target: tuple[int, int] = (0, 0)) -> Scenario:
    n, m = target
    if variable == "theta_hat":
        return base.with_demand(n, m, theta_hat=float(value))
    if variable == "x_out":
        return base.with_demand(n, m, x_out=int(round(value)))
    if variable == "kappa":
        return base.with_asp(n, kappa=float(value))
    raise DomainError(f"{variable!r} cannot be applied to a fixed scenario")


# ---------------------------------------------------------------------------
# experiment specification
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    name: str = "experiment"
    source: str = "generator"           # generator | case-study | file
    scenario_file: str | None = None
    seed: int = 0
    n_asps: int = 2
    n_mus: int = 3
    replicates: int = 1
    sweep_var: str | None = None
    sweep_values: tuple = ()
    target: tuple[int, int] = (0, 0)
    schemes: tuple[Scheme, ...] = (PROPOSED,)
    game: GameConfig = field(default_factory=GameConfig)
    calibration: Calibration = DEFAULT_CALIBRATION
    ranges: GeneratorRanges = DEFAULT_RANGES
    override_ranges: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        self.sweep_values = tuple(self.sweep_values)
        self.schemes = tuple(self.schemes)
        if not self.schemes:
            raise DomainError("an experiment needs at least one scheme")
        if self.source not in ("generator", "case-study", "file"):
            raise DomainError(f"unknown scenario source {self.source!r}")
        if self.source == "file" and not self.scenario_file:
            raise DomainError("file source needs scenario_file")
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        if self.sweep_var is not None:
            if self.sweep_var not in SWEEP_VARS:
                raise DomainError(f"sweep variable must be one of {SWEEP_VARS}")
            if self.sweep_var in ("M", "N") and self.source != "generator":
                raise DomainError("M and N sweeps need the generator source")
            if not self.override_ranges:
                bad = [v for v in self.sweep_values if not self.ranges.contains(self.sweep_var, v)]
                if bad:
                    raise DomainError(
                        f"sweep values {bad} lie outside the configured ranges (use override_ranges)")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source": self.source,
            "scenario_file": self.scenario_file,
            "seed": self.seed,
            "n_asps": self.n_asps,
            "n_mus": self.n_mus,
            "replicates": self.replicates,
            "sweep_var": self.sweep_var,
            "sweep_values": [float(v) for v in self.sweep_values],
            "target": list(self.target),
            "schemes": [s.label for s in self.schemes],
            "game": {
                "schedule": str(self.game.schedule),
                "epsilon": self.game.epsilon,
                "max_rounds": self.game.max_rounds,
                "init_seed": self.game.init_seed,
            },
            "calibration": self.calibration.to_dict(),
            "override_ranges": self.override_ranges,
        }

    @property
    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def sweep_points(self) -> list[float | None]:
        return list(self.sweep_values) if self.sweep_var else [None]

    def scenarios_at(self, value) -> list[Scenario]:
        seeds = [self.seed + i for i in range(self.replicates)]
        if self.source == "generator":
            n, m = self.n_asps, self.n_mus
            if self.sweep_var == "M":
                m = int(value)
            elif self.sweep_var == "N":
                n = int(value)
            out = [generate_scenario(s, n, m, self.ranges, self.calibration) for s in seeds]
        elif self.source == "case-study":
            out = [case_study_scenario(self.calibration)]
        else:
            out = [load_scenario(self.scenario_file)]
        if self.sweep_var in ("theta_hat", "x_out", "kappa"):
            out = [apply_sweep(s, self.sweep_var, value, self.target) for s in out]
        return out


_SWEEP_KIND = {"kappa": "time"}


def parse_sweep_values(variable: str, values) -> tuple:
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    kind = _SWEEP_KIND.get(variable)
    out = []
    for v in values:
        x = parse_quantity(v, kind) if kind else float(v)
        out.append(int(round(x)) if variable in ("x_out", "M", "N") else x)
    return tuple(out)


def spec_from_dict(doc: dict, base_dir: Path | None = None) -> ExperimentSpec:
    game_doc = doc.get("game", {})
    game = GameConfig(
        schedule=StepSchedule.parse(game_doc.get("schedule", str(GameConfig().schedule))),
        epsilon=float(game_doc.get("epsilon", GameConfig().epsilon)),
        max_rounds=int(game_doc.get("max_rounds", GameConfig().max_rounds)),
        init_seed=game_doc.get("init_seed"),
    )
    scen = doc.get("scenario", {})
    source = scen.get("source", "generator")
    path = scen.get("file")
    if path is not None:
        source = "file"
        if base_dir is not None and not Path(path).is_absolute():
            path = str(base_dir / path)
    sweep = doc.get("sweep", {})
    var = sweep.get("variable")
    values = parse_sweep_values(var, sweep.get("values", [])) if var else ()
    schemes = tuple(Scheme.parse(s) for s in doc.get("schemes", ["proposed"]))
    return ExperimentSpec(
        name=doc.get("name", "experiment"),
        source=source,
        scenario_file=path,
        seed=int(scen.get("seed", doc.get("seed", 0))),
        n_asps=int(scen.get("n_asps", 2)),
        n_mus=int(scen.get("n_mus", 3)),
        replicates=int(scen.get("replicates", 1)),
        sweep_var=var,
        sweep_values=values,
        target=tuple(sweep.get("target", (0, 0))),
        schemes=schemes,
        game=game,
        calibration=calibration_from_dict(doc.get("calibration")),
        override_ranges=bool(doc.get("override_ranges", False)),
        out_dir=doc.get("out"),
    )


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    with path.open("rb") as fh:
        doc = tomli.load(fh)
    return spec_from_dict(doc, path.parent)


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

@dataclass
class PointResult:
    index: int
    sweep_value: float | None
    scheme: str
    metrics: dict[str, float] = field(default_factory=dict)
    series: dict[str, float] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    trajectory: list[tuple[int, float, list[float]]] = field(default_factory=list)
    table: list[dict] = field(default_factory=list)
    error: str | None = None


@dataclass
class RunRecord:
    spec: ExperimentSpec
    spec_hash: str
    seed: int
    points: list[PointResult]
    calibration: dict
    version: str
    started: float = 0.0
    finished: float = 0.0
    files: list[str] = field(default_factory=list)

    @property
    def failures(self) -> list[PointResult]:
        return [p for p in self.points if p.error is not None]

    def series(self, scheme: str, key: str) -> list[float]:
        """Values of a metric or per-agent series along the sweep for one scheme."""
        out = []
        for p in self.points:
            if p.scheme != scheme or p.error:
                continue
            out.append(p.metrics[key] if key in p.metrics else p.series[key])
        return out

    def manifest(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "spec_hash": self.spec_hash,
            "seed": self.seed,
            "version": self.version,
            "calibration": self.calibration,
            "started": self.started,
            "finished": self.finished,
            "points": len(self.points),
            "failures": [{"index": p.index, "scheme": p.scheme, "sweep_value": p.sweep_value,
                          "error": p.error} for p in self.failures],
            "status": "partial" if self.failures else "ok",
            "trends": trend_summary(self),
            "files": self.files,
        }


def _package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _outcome_series(o: SchemeOutcome) -> dict[str, float]:
    series: dict[str, float] = {}
    n_asps, n_mus = o.rewards.shape
    q = o.report.qoe if o.report is not None else None
    for n in range(n_asps):
        for m in range(n_mus):
            series[f"reward[{n},{m}]"] = float(o.rewards[n, m])
            series[f"f[{n},{m}]"] = float(o.alloc.f[n, m])
            series[f"b[{n},{m}]"] = float(o.alloc.b[n, m])
            if q is not None:
                series[f"qoe[{n},{m}]"] = float(q[n, m])
    if o.report is not None:
        for m, u in enumerate(o.report.mu_utilities):
            series[f"mu_utility[{m}]"] = float(u)
        for n, u in enumerate(o.report.asp_utilities):
            series[f"asp_utility[{n}]"] = float(u)
    return series


def _run_point(args) -> PointResult:
    spec, index, value, scheme = args
    res = PointResult(index, value, scheme.label)
    try:
        outcomes = [run_scheme(s, scheme, spec.game) for s in spec.scenarios_at(value)]
        keys = outcomes[0].metrics.as_dict().keys()
        res.metrics = {k: float(np.mean([o.metrics.as_dict()[k] for o in outcomes])) for k in keys}
        first = outcomes[0]
        if spec.replicates == 1:
            res.series = _outcome_series(first)
            if first.report is not None and first.report.qoe is not None:
                res.table = [
                    {"asp": n + 1, "mu": m + 1,
                     "f_tflops": first.alloc.f[n, m] / 1e12,
                     "b_mhz": first.alloc.b[n, m] / 1e6,
                     "reward": first.rewards[n, m],
                     "qoe_ms": first.report.qoe[n, m] * 1e3}
                    for n in range(first.rewards.shape[0]) for m in range(first.rewards.shape[1])
                ]
        if first.report is not None:
            rep = first.report
            res.summary = {
                "rounds": rep.rounds_used,
                "converged": rep.converged,
                "certified": rep.ne_certified,
                "worst_gain": None if rep.certification is None else float(rep.certification.worst_gain),
            }
            res.trajectory = [
                (t, float(rep.utility_change[t - 1]) if t > 0 else float("nan"),
                 [float(u) for u in rep.mu_utility_history[t]])
                for t in range(rep.mu_utility_history.shape[0])
            ]
    except Exception as exc:  # recorded per point, the sweep carries on
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def run_experiment(spec: ExperimentSpec, jobs: int = 1, write: bool = True) -> RunRecord:
    started = time.time()
    tasks = [(spec, i, v, s) for i, v in enumerate(spec.sweep_points()) for s in spec.schemes]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_run_point, tasks))
    else:
        points = [_run_point(t) for t in tasks]
    record = RunRecord(
        spec=spec,
        spec_hash=spec.spec_hash,
        seed=spec.seed,
        points=points,
        calibration=spec.calibration.to_dict(),
        version=_package_version(),
        started=started,
        finished=time.time(),
    )
    if write and spec.out_dir:
        write_outputs(record, Path(spec.out_dir))
    return record


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", text).strip("-")


def write_outputs(record: RunRecord, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = [emit_csv(record, "trend", out / "trend.csv")]
    if record.spec.source == "case-study":
        written.append(emit_csv(record, "case_study", out / "case_study.csv"))
    for p in record.points:
        if p.trajectory:
            name = f"trajectory_{p.index:03d}_{_slug(p.scheme)}.csv"
            written.append(emit_csv(record, "trajectory", out / name, point=p))
    record.files = [w.name for w in written]
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(record.manifest(), indent=2, sort_keys=True, default=str) + "\n",
                        encoding="utf-8")
    return written + [manifest]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.9g}"


def emit_csv(record: RunRecord, kind: str, path: str | Path, point: PointResult | None = None) -> Path:
    """Write one of the three CSV layouts: trend, case_study or trajectory."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if kind == "trend":
        w.writerow(["sweep_var", "sweep_value", "scheme", "metric", "value"])
        var = record.spec.sweep_var or ""
        for p in record.points:
            if p.error:
                continue
            for key, value in list(p.metrics.items()) + list(p.series.items()):
                w.writerow([var, _fmt(p.sweep_value), p.scheme, key, _fmt(value)])
    elif kind == "case_study":
        w.writerow(["asp", "mu", "f_tflops", "b_mhz", "reward", "qoe_ms"])
        base = next((p for p in record.points if p.table and p.scheme == "proposed"), None)
        for row in (base.table if base else []):
            w.writerow([row["asp"], row["mu"]] + [_fmt(row[k]) for k in ("f_tflops", "b_mhz", "reward", "qoe_ms")])
    elif kind == "trajectory":
        if point is None:
            point = next((p for p in record.points if p.trajectory), None)
        n_mus = len(point.trajectory[0][2]) if point and point.trajectory else 0
        w.writerow(["round", "sum_abs_utility_change"] + [f"mu_utility_{m}" for m in range(n_mus)])
        for t, change, utils in (point.trajectory if point else []):
            w.writerow([t, "" if t == 0 else _fmt(change)] + [_fmt(u) for u in utils])
    else:
        raise ValueError(f"unknown CSV kind {kind!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(buf.getvalue().encode("utf-8"))
    except OSError as exc:
        raise OSError(f"cannot write {kind} CSV to {path}: {exc}") from exc
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def slope_signs(values) -> list[int]:
    d = np.diff(np.asarray(values, dtype=float))
    return [int(np.sign(x)) for x in d]


def trend_summary(record: RunRecord) -> dict[str, str]:
    """Overall direction of every reported curve: up, down, flat or mixed."""
    if not record.spec.sweep_var:
        return {}
    out = {}
    for scheme in dict.fromkeys(p.scheme for p in record.points if not p.error):
        keys = next(p for p in record.points if p.scheme == scheme and not p.error)
        for key in list(keys.metrics) + list(keys.series):
            try:
                vals = record.series(scheme, key)
            except KeyError:
                continue
            signs = set(slope_signs(vals)) - {0}
            label = "flat" if not signs else ("up" if signs == {1} else "down" if signs == {-1} else "mixed")
            out[f"{scheme}/{key}"] = label
    return out


def with_game(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    return replace(spec, game=replace(spec.game, **changes))

"""Unit parsing, the calibration block, generator ranges and scenario files.

Scenario files are TOML documents whose physical quantities may carry unit
suffixes ("500ms", "30TFLOPS", "200MHz", "20dB"). Everything is converted to
SI on load and written back with suffixes.
"""
from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import tomli
import tomli_w

from .model import (
    AspParams,
    Channel,
    Demand,
    DomainError,
    GapBoundParams,
    MuParams,
    Scenario,
    examples_for_accuracy,
    gap_bound,
)

_SCALE = {
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6},
    "frequency": {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9},
    "compute": {"flops": 1.0, "gflops": 1e9, "tflops": 1e12, "pflops": 1e15},
}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z]*)\s*$")


def parse_quantity(value, kind: str) -> float:
    """Convert a number or suffixed string to SI.

    ``kind`` is one of time, frequency, compute or snr. SNR strings ending in
    dB are converted to a linear ratio; bare numbers are taken as already SI
    (linear for snr).
    """
    if isinstance(value, bool):
        raise DomainError(f"expected a quantity, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    match = _QUANTITY.match(str(value))
    if not match:
        raise DomainError(f"cannot parse quantity {value!r}")
    number, unit = float(match.group(1)), match.group(2).lower()
    if kind == "snr":
        if unit == "db":
            return 10.0 ** (number / 10.0)
        if unit == "":
            return number
        raise DomainError(f"unknown SNR unit in {value!r}")
    if unit == "":
        return number
    try:
        return number * _SCALE[kind][unit]
    except KeyError:
        raise DomainError(f"unit {unit!r} is not a {kind} unit (in {value!r})") from None


def format_quantity(value: float, kind: str) -> str:
    if kind == "time":
        return f"{value * 1e3!r}ms"
    if kind == "frequency":
        return f"{value / 1e6!r}MHz"
    if kind == "compute":
        return f"{value / 1e12!r}TFLOPS"
    if kind == "snr":
        return f"{10.0 * math.log10(value)!r}dB"
    raise ValueError(kind)


@dataclass(frozen=True)
class Calibration:
    """Hidden parameters the market model needs but the source data leaves open.

    Rewards are currency per second of QoE. The gap-bound constants give
    bound(K) = 10**-(K+1), so each shipped accuracy target maps to an even K.
    """

    xi: float = 300.0           # FLOPs per token-unit
    c_f: float = 1.5e-14        # currency per FLOPS
    c_b: float = 3.5e-12        # currency per Hz
    mu: float = 3.0             # MU gain weight
    r_min: float = 1e-3
    r_max: float = 1.0
    eta: float = 1.0 / 11.0
    zeta0: float = 1.0 / 21.0
    upsilon: float = 1.0

    def gap_params(self, k: int = 1) -> GapBoundParams:
        return GapBoundParams(self.eta, self.zeta0, self.upsilon, k)

    def theta_for_k(self, k: int) -> float:
        return gap_bound(self.gap_params(k))

    def k_for_theta(self, theta_hat: float) -> int:
        return examples_for_accuracy(theta_hat, self.gap_params())

    def with_overrides(self, **changes) -> "Calibration":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_CALIBRATION = Calibration()

# reference (theta_hat, K) pairs
K_LOOKUP = {1e-11: 10, 1e-9: 8, 1e-7: 6, 1e-5: 4, 1e-3: 2}


@dataclass(frozen=True)
class GeneratorRanges:
    k_values: tuple[int, ...] = (2, 4, 6, 8, 10)
    tokens: tuple[int, int] = (100, 2000)
    f_max: tuple[float, float] = (5e12, 30e12)      # FLOPS
    b_max: tuple[float, float] = (100e6, 500e6)     # Hz
    kappa: tuple[float, float] = (0.3, 1.5)         # s
    snr_db: tuple[float, float] = (10.0, 30.0)

    def __post_init__(self):
        if not self.k_values or any(k < 0 for k in self.k_values):
            raise DomainError("k_values must be a non-empty set of non-negative ints")
        lo_tok, hi_tok = self.tokens
        if not 1 <= lo_tok <= hi_tok:
            raise DomainError(f"token range must satisfy 1 <= lo <= hi, got {self.tokens}")
        for name in ("f_max", "b_max", "kappa"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise DomainError(f"{name} range must satisfy 0 < lo <= hi, got {(lo, hi)}")
        if self.snr_db[0] > self.snr_db[1]:
            raise DomainError("snr_db range is reversed")

    def contains(self, variable: str, value: float) -> bool:
        if variable == "theta_hat":
            cal = DEFAULT_CALIBRATION
            ks = [cal.theta_for_k(k) for k in self.k_values]
            return min(ks) * (1 - 1e-9) <= value <= max(ks) * (1 + 1e-9)
        if variable in ("x_out", "x_in"):
            return self.tokens[0] <= value <= self.tokens[1]
        if variable == "kappa":
            return self.kappa[0] <= value <= self.kappa[1]
        return True


DEFAULT_RANGES = GeneratorRanges()


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def scenario_to_dict(s: Scenario) -> dict:
    doc: dict = {"name": s.name}
    if s.seed is not None:
        doc["seed"] = int(s.seed)
    doc["asp"] = [
        {
            "kappa": format_quantity(a.kappa, "time"),
            "xi": a.xi,
            "c_f": a.c_f,
            "c_b": a.c_b,
            "f_max": format_quantity(a.f_max, "compute"),
            "b_max": format_quantity(a.b_max, "frequency"),
        }
        for a in s.asps
    ]
    doc["mu"] = [{"mu": u.mu, "r_min": u.r_min, "r_max": u.r_max} for u in s.mus]
    doc["demand"] = [
        {
            "asp": n,
            "mu": m,
            "theta_hat": d.theta_hat,
            "x_in": int(d.x_in),
            "x_out": int(d.x_out),
            "snr": format_quantity(s.channels[n][m].snr, "snr"),
        }
        for n, row in enumerate(s.demands)
        for m, d in enumerate(row)
    ]
    return doc


def scenario_from_dict(doc: dict, calibration: Calibration | None = None) -> Scenario:
    """Build a scenario; ASP cost constants missing from ``doc`` come from the calibration."""
    cal = calibration or DEFAULT_CALIBRATION
    try:
        asps = [
            AspParams(
                kappa=parse_quantity(a["kappa"], "time"),
                xi=float(a.get("xi", cal.xi)),
                c_f=float(a.get("c_f", cal.c_f)),
                c_b=float(a.get("c_b", cal.c_b)),
                f_max=parse_quantity(a["f_max"], "compute"),
                b_max=parse_quantity(a["b_max"], "frequency"),
            )
            for a in doc["asp"]
        ]
        mus = [MuParams(float(u.get("mu", cal.mu)), float(u.get("r_min", cal.r_min)),
                        float(u.get("r_max", cal.r_max))) for u in doc["mu"]]
        n, m = len(asps), len(mus)
        demands: list[list] = [[None] * m for _ in range(n)]
        channels: list[list] = [[None] * m for _ in range(n)]
        for d in doc["demand"]:
            i, j = int(d["asp"]), int(d["mu"])
            if "k" in d and "theta_hat" not in d:
                theta = cal.theta_for_k(int(d["k"]))
            else:
                theta = float(d["theta_hat"])
            demands[i][j] = Demand(theta, int(d["x_in"]), int(d["x_out"]))
            channels[i][j] = Channel(parse_quantity(d["snr"], "snr"))
    except KeyError as exc:
        raise DomainError(f"scenario document is missing field {exc}") from None
    except IndexError:
        raise DomainError("demand entry references an unknown ASP or MU index") from None
    missing = [(i, j) for i in range(n) for j in range(m) if demands[i][j] is None]
    if missing:
        raise DomainError(f"scenario document lacks demands for pairs {missing}")
    return Scenario(asps, mus, demands, channels, doc.get("seed"), doc.get("name", ""))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomli.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read scenario file {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise DomainError(f"{path}: {exc}") from exc
    return scenario_from_dict(doc)


def dump_scenario(s: Scenario, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(tomli_w.dumps(scenario_to_dict(s)).encode("utf-8"))
    return path


def calibration_from_dict(doc: dict | None, base: Calibration = DEFAULT_CALIBRATION) -> Calibration:
    if not doc:
        return base
    known = {f.name for f in fields(Calibration)}
    unknown = set(doc) - known
    if unknown:
        raise DomainError(f"unknown calibration keys {sorted(unknown)}")
    return replace(base, **{k: float(v) for k, v in doc.items()})

"""Parameter sweeps pairing analytic predictions with simulation, plus CSV/JSON output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Any, Iterable

from fastretrial.analytic import SystemConfig, analyze, lambda_max
from fastretrial.errors import FastRetrialError, InvalidConfigError
from fastretrial.simulator import SimConfig, empirical_success_prob, run_simulation

SWEEP_VARIABLES = ("lambda", "N", "L", "scale")
KINDS = ("tail", "throughput")
DESK_RUNS = 200
PAPER_RUNS = 1000
_SIM_KEYS = {"total_slots", "warmup_slots", "num_runs", "master_seed", "max_tau"}
_FIXED_KEYS = {
    "lambda": ("n_devices", "n_preambles"),
    "N": ("n_preambles", "arrival_rate"),
    "L": ("n_devices", "arrival_rate"),
    "scale": ("n_devices", "n_preambles", "arrival_rate"),
}


@dataclass
class SweepSpec:
    """One figure's worth of grid points.

    For ``sweep_variable == "scale"`` the fixed ``n_devices``/``n_preambles``
    are the baseline system multiplied by each grid value. ``kind ==
    "throughput"`` sweeps N and tabulates maximum throughputs instead.
    """

    sweep_variable: str
    grid: list
    fixed: dict = field(default_factory=dict)
    sim: dict | None = None
    taus: list = field(default_factory=lambda: [1, 2, 3, 4])
    kind: str = "tail"
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise InvalidConfigError(
                f"sweep_variable must be one of {SWEEP_VARIABLES}, got {self.sweep_variable!r}"
            )
        if not self.grid:
            raise InvalidConfigError("grid must be non-empty")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise InvalidConfigError("grid must be strictly increasing")
        if self.kind == "throughput":
            if self.sweep_variable != "N" or "n_preambles" not in self.fixed:
                raise InvalidConfigError("throughput sweeps need sweep_variable 'N' and fixed n_preambles")
            return
        missing = [k for k in _FIXED_KEYS[self.sweep_variable] if k not in self.fixed]
        if missing:
            raise InvalidConfigError(f"fixed is missing {missing} for a {self.sweep_variable} sweep")
        if not self.taus or any(int(t) != t or t < 1 for t in self.taus):
            raise InvalidConfigError("taus must be a non-empty list of positive integers")
        if self.sim is not None:
            unknown = set(self.sim) - _SIM_KEYS
            if unknown:
                raise InvalidConfigError(f"unknown sim keys {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        known = {"sweep_variable", "grid", "fixed", "sim", "taus", "kind", "name"}
        extra = set(d) - known
        if extra:
            raise InvalidConfigError(f"unknown sweep spec fields {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, fh: IO[str]) -> "SweepSpec":
        return cls.from_dict(json.load(fh))

    def system_at(self, x) -> SystemConfig:
        f = self.fixed
        if self.sweep_variable == "lambda":
            return SystemConfig(f["n_devices"], f["n_preambles"], x)
        if self.sweep_variable == "N":
            return SystemConfig(x, f["n_preambles"], f["arrival_rate"])
        if self.sweep_variable == "L":
            return SystemConfig(f["n_devices"], x, f["arrival_rate"])
        return SystemConfig(f["n_devices"] * x, f["n_preambles"] * x, f["arrival_rate"])

    def sim_config(self, system: SystemConfig, paper_scale: bool = False) -> SimConfig | None:
        if self.sim is None:
            return None
        opts = {"num_runs": DESK_RUNS, "max_tau": max(self.taus)}
        opts.update(self.sim)
        if paper_scale:
            opts["num_runs"] = PAPER_RUNS
        return SimConfig(system, **opts)


@dataclass
class SweepRow:
    x: Any
    system: SystemConfig
    analytic: dict | None = None
    simulated: dict | None = None
    status: str = "ok"

    def flat(self, taus: Iterable[int]) -> dict:
        out = {
            "x": self.x,
            "n_devices": self.system.n_devices,
            "n_preambles": self.system.n_preambles,
            "arrival_rate": self.system.arrival_rate,
            "status": self.status,
        }
        a = self.analytic or {}
        s = self.simulated or {}
        for key in ("alpha", "alpha_tilde", "p", "p_tilde", "theta_star"):
            out[key] = a.get(key)
        for t in taus:
            out[f"theory_tail_{t}"] = a.get("tail", {}).get(t)
        for t in taus:
            out[f"sim_tail_{t}"] = s.get("tail", {}).get(t)
            out[f"sim_hits_{t}"] = s.get("hits", {}).get(t)
        for key in ("alpha", "p", "empty_prob", "mean_queue", "samples", "diverged_runs"):
            out[f"sim_{key}"] = s.get(key)
        return out


def _analytic_columns(system: SystemConfig, taus) -> dict:
    finite = analyze(system, "finite")
    asym = analyze(system, "asymptotic")
    return {
        "alpha": finite.alpha,
        "alpha_tilde": asym.alpha,
        "p": finite.p_success,
        "p_tilde": asym.p_success,
        "theta_star": asym.theta_star,
        "tail": {t: asym.tail(t) for t in taus},
    }


def _simulated_columns(cfg: SimConfig, taus) -> dict:
    est = run_simulation(cfg)
    try:
        p = empirical_success_prob(est)
    except FastRetrialError:
        p = None
    return {
        "tail": {t: est.tail_at(t) for t in taus},
        "hits": {t: est.tail_hits[t - 1] for t in taus},
        "alpha": est.empirical_alpha,
        "p": p,
        "empty_prob": est.empty_prob,
        "mean_queue": est.mean_queue,
        "samples": est.samples,
        "diverged_runs": est.diverged_runs,
    }


def run_sweep(spec: SweepSpec, paper_scale: bool = False) -> list[SweepRow]:
    """Evaluate every grid point of ``spec``, in grid order.

    Points failing the analytic preconditions are marked ``infeasible`` but
    still simulated, since the stability bound is only sufficient.
    """
    if spec.kind == "throughput":
        raise InvalidConfigError("use throughput_comparison for throughput sweeps")
    rows = []
    for x in spec.grid:
        system = spec.system_at(x)
        row = SweepRow(x=x, system=system)
        try:
            row.analytic = _analytic_columns(system, spec.taus)
        except FastRetrialError:
            row.status = "infeasible"
        sim = spec.sim_config(system, paper_scale)
        if sim is not None:
            row.simulated = _simulated_columns(sim, spec.taus)
            if row.simulated["diverged_runs"]:
                row.status = "diverged"
        rows.append(row)
    return rows


def throughput_comparison(n_preambles: int, n_grid: Iterable[int]) -> list[dict]:
    """Maximum throughput of plain vs fast-retrial multichannel ALOHA.

    Conventional: ``N * S(L/N) = L (1 - 1/N)^(N-1)``, roughly ``L/e``.
    Fast retrial (stable): ``N * S(1) = N (1 - 1/L)^(N-1)``.
    """
    rows = []
    for n in n_grid:
        cfg = SystemConfig(n, n_preambles, 1e-3)
        rows.append({
            "n_devices": n,
            "n_preambles": n_preambles,
            "conventional": n_preambles * (1.0 - 1.0 / n) ** (n - 1),
            "fast_retrial": n * lambda_max(cfg),
        })
    return rows


def run_spec(spec: SweepSpec, paper_scale: bool = False) -> list[dict]:
    """Flat table rows for any kind of spec."""
    if spec.kind == "throughput":
        return throughput_comparison(spec.fixed["n_preambles"], spec.grid)
    return [r.flat(spec.taus) for r in run_sweep(spec, paper_scale)]


# --------------------------------------------------------------------------
# built-in figure specs and output


def figure_names() -> list[str]:
    files = resources.files("fastretrial.specs").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def load_figure(name: str) -> SweepSpec:
    path = resources.files("fastretrial.specs").joinpath(f"{name}.json")
    if not path.is_file():
        raise InvalidConfigError(f"unknown figure {name!r}; choose from {figure_names()}")
    with path.open(encoding="utf-8") as fh:
        spec = SweepSpec.load(fh)
    if not spec.name:
        spec.name = name
    return spec


def output_name(spec: SweepSpec, ext: str = "csv") -> str:
    return f"{spec.name}_{spec.sweep_variable}.{ext}" if spec.name else f"sweep_{spec.sweep_variable}.{ext}"


def fmt_number(v, digits: int = 12):
    """Round floats to ``digits`` significant digits; pass other values through."""
    if isinstance(v, bool) or not isinstance(v, float):
        return v
    if not math.isfinite(v):
        return None
    return float(f"{v:.{digits}g}")


def write_csv(rows: list[dict], fh: IO[str]) -> None:
    if not rows:
        return
    writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if v is None else fmt_number(v)) for k, v in r.items()})


def to_json(rows: list[dict]) -> str:
    clean = [{k: fmt_number(v) for k, v in r.items()} for r in rows]
    return json.dumps(clean, indent=1)


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO(newline="")
    write_csv(rows, buf)
    return buf.getvalue()

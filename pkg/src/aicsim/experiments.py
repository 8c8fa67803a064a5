"""Experiment harness: tessellation x fraction x replication sweeps, benchmarks, and reports."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import subprocess
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics as mx
from .engine import RunOutput, ScenarioConfig, World, run, series_csv
from .errors import AicError, ConfigError, UndefinedMetric
from .tessellation import KINDS

log = logging.getLogger(__name__)

ALL_FRACTIONS = (1.0, 0.75, 0.5, 0.25, 0.1)
REFERENCE = "NT"


@dataclass
class SweepSpec:
    kinds: list[str] = field(default_factory=lambda: ["NT", "CBG", "VD_r", "CBGVD"])
    fractions: list[float] = field(default_factory=lambda: list(ALL_FRACTIONS))
    replications: int = 5
    base_seed: int = 0
    ablate_sa: bool = False

    def __post_init__(self):
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise ConfigError(f"unknown tessellation kinds {bad}")
        if REFERENCE not in self.kinds:
            self.kinds = [REFERENCE, *self.kinds]
        badf = [f for f in self.fractions if f not in ALL_FRACTIONS]
        if badf:
            raise ConfigError(f"fractions must come from {ALL_FRACTIONS}, got {badf}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        self.fractions = sorted(set(self.fractions), reverse=True)


@dataclass
class RunRecord:
    mode: str  # "SA" or "noSA"
    kind: str
    fraction: float
    replication: int
    seed: int
    values: dict[str, float]
    series: list[float]


@dataclass
class SweepResult:
    spec: SweepSpec
    target: mx.MetricTarget
    records: list[RunRecord]
    failures: list[dict]

    def samples(self, mode: str, kind: str, fraction: float, metric: str) -> list[float]:
        return [r.values[metric] for r in self.records
                if r.mode == mode and r.kind == kind and r.fraction == fraction]

    def reference(self, metric: str) -> list[float]:
        return self.samples("SA", REFERENCE, 1.0, metric)


class WorldCache:
    """Reuses the city, tessellation, and population across runs of one kind."""

    def __init__(self, base: ScenarioConfig):
        self.base = base
        self._city = None
        self._bundles: dict[str, object] = {}
        self._pop = None

    def world(self, scenario: ScenarioConfig) -> World:
        if self._city is None:
            w = World(scenario)
            self._city, self._pop = w.city, w.pop
            self._bundles[scenario.tessellation] = w.bundle
            return w
        w = World(scenario, city=self._city, bundle=self._bundles.get(scenario.tessellation), population=self._pop)
        self._bundles[scenario.tessellation] = w.bundle
        return w

    @property
    def city(self):
        if self._city is None:
            self.world(replace(self.base, tessellation=REFERENCE))
        return self._city


def run_sweep(base: ScenarioConfig, spec: SweepSpec) -> SweepResult:
    cache = WorldCache(base)
    target = mx.city_target(cache.city)
    records, failures = [], []
    grid = []
    for kind in spec.kinds:
        fractions = spec.fractions if kind != REFERENCE or 1.0 in spec.fractions else [1.0, *spec.fractions]
        for f in fractions:
            grid.append(("SA", kind, f))
            if spec.ablate_sa and f < 1.0:
                grid.append(("noSA", kind, f))
    for rep in range(spec.replications):
        seed = spec.base_seed + rep
        for mode, kind, f in grid:
            sc = replace(base, tessellation=kind, fraction=f, super_agents=(mode == "SA"), seed=seed)
            try:
                out = run(sc, cache.world(sc))
                values = mx.measure(out.events, target)
                records.append(RunRecord(mode, kind, f, rep, seed, values, [s[1] for s in out.series]))
                log.info("%s %s f=%.2f rep=%d %s", mode, kind, f, rep, values)
            except (AicError, ValueError, FloatingPointError) as e:
                log.error("run failed: %s %s f=%s rep=%d: %s", mode, kind, f, rep, e)
                failures.append({"mode": mode, "kind": kind, "fraction": f, "replication": rep, "error": str(e)})
    return SweepResult(spec, target, records, failures)


# --------------------------------------------------------------------------
# derived tables


def error_rows(res: SweepResult, mode: str = "SA") -> list[list]:
    rows = []
    reduced = [f for f in mx.REDUCED_FRACTIONS if f in res.spec.fractions]
    fractions = reduced if reduced else [f for f in res.spec.fractions]
    for kind in res.spec.kinds:
        for metric in mx.METRICS:
            ref = res.reference(metric)
            per = {}
            for f in fractions:
                s = res.samples(mode, kind, f, metric)
                per[f] = abs(_mean(s) - _mean(ref)) if s and ref else math.nan
            complete = len(reduced) == len(mx.REDUCED_FRACTIONS)
            if complete:
                try:
                    agg = mx.aggregate_abs_error({f: res.samples(mode, kind, f, metric) for f in fractions}, ref,
                                                 metric, kind).aggregate
                except UndefinedMetric:
                    agg = math.nan
            else:
                agg = float(np.mean(list(per.values()))) if per else math.nan
            rows.append([mode, kind, metric, *[per.get(f, math.nan) for f in mx.REDUCED_FRACTIONS],
                         per.get(1.0, abs(_mean(res.samples(mode, kind, 1.0, metric)) - _mean(ref))
                                 if res.samples(mode, kind, 1.0, metric) and ref else math.nan),
                         agg, int(complete)])
    return rows


ERROR_HEADER = ["mode", "tessellation", "metric", "err_0.75", "err_0.5", "err_0.25", "err_0.1", "err_1.0",
                "aggregate", "complete"]


def tau_rows(res: SweepResult) -> list[list]:
    rows = []
    if not res.spec.ablate_sa:
        return rows
    for kind in res.spec.kinds:
        for f in res.spec.fractions:
            if f >= 1.0:
                continue
            for metric in mx.METRICS:
                nt = _mean(res.reference(metric))
                w = _mean(res.samples("SA", kind, f, metric))
                wo = _mean(res.samples("noSA", kind, f, metric))
                try:
                    tau = mx.sa_contribution(nt, w, wo)
                except UndefinedMetric:
                    tau = math.nan
                rows.append([kind, f, metric, nt, w, wo, tau])
    return rows


TAU_HEADER = ["tessellation", "fraction", "metric", "nt", "with_sa", "without_sa", "tau"]


def convergence_rows(res: SweepResult) -> list[list]:
    rows = []
    for r_mode, kind, f in sorted({(r.mode, r.kind, r.fraction) for r in res.records}):
        for metric in mx.METRICS:
            vals = [v for v in res.samples(r_mode, kind, f, metric) if math.isfinite(v)]
            if len(vals) < 10:
                rows.append([r_mode, kind, f, metric, len(vals), "", "insufficient"])
                continue
            c = mx.convergence_check(vals)
            rows.append([r_mode, kind, f, metric, len(vals), c.n_star, "converged" if c.converged else "not-converged"])
    return rows


CONVERGENCE_HEADER = ["mode", "tessellation", "fraction", "metric", "replications", "n_star", "verdict"]


def series_distance_rows(res: SweepResult) -> list[list]:
    """Per replication: max / mean daily distance of each run's infected series to the NT 100% run."""
    ref = {r.replication: r.series for r in res.records if r.mode == "SA" and r.kind == REFERENCE and r.fraction == 1.0}
    rows = []
    for r in res.records:
        if r.replication in ref and not (r.mode == "SA" and r.kind == REFERENCE and r.fraction == 1.0):
            mx_, mean_ = mx.infection_series_distance(ref[r.replication], r.series)
            rows.append([r.mode, r.kind, r.fraction, r.replication, mx_, mean_])
    return rows


def _mean(x) -> float:
    a = np.asarray([v for v in x if math.isfinite(v)], dtype=np.float64)
    return float(a.mean()) if a.size else math.nan


def write_sweep(res: SweepResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metric_rows = [[r.mode, r.kind, r.fraction, r.replication, m, res.target.poi_id, r.values[m]]
                   for r in res.records for m in mx.METRICS]
    files = {
        "metrics.csv": mx.write_csv(metric_rows, ["scenario", "tessellation", "fraction", "replication", "metric",
                                                  "poi_id", "value"]),
        "errors.csv": mx.write_csv(error_rows(res, "SA") + (error_rows(res, "noSA") if res.spec.ablate_sa else []),
                                   ERROR_HEADER),
        "tau.csv": mx.write_csv(tau_rows(res), TAU_HEADER),
        "convergence.csv": mx.write_csv(convergence_rows(res), CONVERGENCE_HEADER),
        "series_distance.csv": mx.write_csv(series_distance_rows(res),
                                            ["scenario", "tessellation", "fraction", "replication", "max_diff",
                                             "mean_diff"]),
        "infected.csv": mx.write_csv([[r.mode, r.kind, r.fraction, r.replication, d, v]
                                      for r in res.records for d, v in enumerate(r.series)],
                                     ["scenario", "tessellation", "fraction", "replication", "day",
                                      "infected_fraction"]),
    }
    hist = {}
    for metric in mx.METRICS:
        samples = {f"{r_mode}:{kind}@{f}": res.samples(r_mode, kind, f, metric)
                   for r_mode, kind, f in sorted({(r.mode, r.kind, r.fraction) for r in res.records})}
        key = f"SA:{REFERENCE}@1.0"
        if key in samples and samples[key]:
            hist[metric] = mx.histograms(samples, key)
    files["histograms.json"] = mx.dump_json(hist)
    files["sweep.json"] = mx.dump_json({"spec": asdict(res.spec), "target": asdict(res.target),
                                        "failures": res.failures})
    paths = {}
    for name, text in files.items():
        (out / name).write_text(text)
        paths[name] = out / name
    return paths


# --------------------------------------------------------------------------
# benchmark


BENCH_HEADER = ["workers", "fraction", "tessellation", "wall_seconds", "peak_memory_bytes", "series_sha256"]


def bench_one(scenario: ScenarioConfig) -> dict:
    out = run(scenario)
    return {"wall_seconds": out.meta["wall_seconds"], "peak_memory_bytes": out.meta["peak_memory_bytes"],
            "series_sha256": hashlib.sha256(series_csv(out.series).encode()).hexdigest()}


def bench_subprocess(scenario: ScenarioConfig, timeout: float | None = None) -> dict:
    """Run one benchmark point in a fresh interpreter so the RSS high-water mark is per run."""
    proc = subprocess.run([sys.executable, "-m", "aicsim.experiments", "bench-one"], input=scenario.to_json(),
                          capture_output=True, text=True, timeout=timeout)
    if proc.returncode != 0:
        raise AicError(f"benchmark run failed: {proc.stderr.strip()[-500:]}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def run_bench(base: ScenarioConfig, kinds: Sequence[str], fractions: Sequence[float],
              workers: Sequence[int]) -> list[list]:
    rows = []
    for kind in kinds:
        for f in fractions:
            for w in workers:
                sc = replace(base, tessellation=kind, fraction=f, workers=w)
                r = bench_subprocess(sc)
                rows.append([w, f, kind, r["wall_seconds"], r["peak_memory_bytes"], r["series_sha256"]])
                log.info("bench %s f=%s workers=%d: %.2fs %d bytes", kind, f, w, r["wall_seconds"],
                         r["peak_memory_bytes"])
    return rows


# --------------------------------------------------------------------------
# report


def _read_csv(path: Path) -> list[dict]:
    import csv

    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _table(header: list[str], rows: list[list]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return "\n".join(lines)


def _num(s: str) -> str:
    try:
        v = float(s)
    except ValueError:
        return s
    return "nan" if not math.isfinite(v) else f"{v:.4g}"


def build_report(sweep_dir, bench_csv=None) -> str:
    d = Path(sweep_dir)
    needed = [d / "errors.csv", d / "tau.csv", d / "convergence.csv"]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise ConfigError(f"missing report inputs: {missing}")
    parts = ["# Sweep report", ""]
    err = _read_csv(d / "errors.csv")
    parts += ["## Aggregate absolute error versus NT", "",
              _table(["mode", "tessellation", "metric", "aggregate", "0.75", "0.5", "0.25", "0.1"],
                     [[r["mode"], r["tessellation"], r["metric"], _num(r["aggregate"]), _num(r["err_0.75"]),
                       _num(r["err_0.5"]), _num(r["err_0.25"]), _num(r["err_0.1"])] for r in err]), ""]
    parts += ["## Winner ordering among CBG, VD_r, CBGVD (lowest aggregate error first)", ""]
    for metric in mx.METRICS:
        cand = [(float(r["aggregate"]), r["tessellation"]) for r in err
                if r["mode"] == "SA" and r["metric"] == metric and r["tessellation"] in ("CBG", "VD_r", "CBGVD")
                and math.isfinite(float(r["aggregate"]))]
        order = " < ".join(k for _, k in sorted(cand)) if cand else "n/a"
        parts.append(f"- {metric}: {order}")
    parts.append("")
    tau = _read_csv(d / "tau.csv")
    parts += ["## Super-agent contribution (tau)", "",
              _table(["tessellation", "fraction", "metric", "tau"],
                     [[r["tessellation"], r["fraction"], r["metric"], _num(r["tau"])] for r in tau])
              if tau else "No ablation runs in this sweep.", ""]
    conv = _read_csv(d / "convergence.csv")
    parts += ["## Replication convergence", "",
              _table(["mode", "tessellation", "fraction", "metric", "n", "n*", "verdict"],
                     [[r["mode"], r["tessellation"], r["fraction"], r["metric"], r["replications"], r["n_star"],
                       r["verdict"]] for r in conv]), ""]
    if bench_csv is not None and Path(bench_csv).exists():
        b = _read_csv(Path(bench_csv))
        parts += ["## Benchmark", "",
                  _table(["tessellation", "fraction", "workers", "wall s", "peak MB"],
                         [[r["tessellation"], r["fraction"], r["workers"], _num(r["wall_seconds"]),
                           f"{int(r['peak_memory_bytes']) / 2**20:.1f}"] for r in b]), ""]
    return "\n".join(parts) + "\n"


def _main(argv: list[str]) -> int:
    if argv[:1] == ["bench-one"]:
        sc = ScenarioConfig(**json.loads(sys.stdin.read()))
        print(json.dumps(bench_one(sc)))
        return 0
    print("usage: python -m aicsim.experiments bench-one < scenario.json", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(_main(sys.argv[1:]))

"""Experiment matrices over cooperative-share sweeps, with result export.

A matrix is seeds x proportions x (shared-count, density) variants. Every
run with p > 0 is compared against the same-seed, same-variant run at p = 0;
flagged or missing baselines skip the comparison with a report entry instead
of failing the sweep. All exports are deterministic: fixed orderings, repr
floats, and no timestamps.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .ibr import IbrConfig, default_schedule
from .metrics import (
    GROUPINGS,
    PairedComparison,
    RunMetrics,
    compute_isi_psi,
    subgroup_report,
    trace_metrics,
)
from .world import STATUS_COMPLETED, SimulationConfig, WorldTrace, run_simulation, save_trace

SUMMARY_SCHEMA = "svosim-summary-v1"


@dataclass(frozen=True)
class MatrixVariant:
    """One coordination/traffic setting swept across all seeds."""

    n_sc: int = 1
    density_veh_per_hour: float = 3000.0


@dataclass(frozen=True)
class MatrixConfig:
    """Full sweep description; base carries everything run-invariant."""

    seeds: tuple[int, ...] = (0, 1, 2)
    proportions: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    variants: tuple[MatrixVariant, ...] = (MatrixVariant(),)
    base: SimulationConfig = field(default_factory=SimulationConfig)
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.seeds or not self.proportions or not self.variants:
            raise ValueError("seeds, proportions, and variants must be non-empty")
        if any(not 0.0 <= p <= 1.0 for p in self.proportions):
            raise ValueError("proportions must lie in [0, 1]")
        if self.jobs < 1:
            raise ValueError("jobs must be positive")


def run_id(seed: int, p: float, n_sc: int, density: float) -> str:
    return f"seed{seed}-p{int(round(p * 100)):03d}-nsc{n_sc}-d{int(round(density))}"


def build_run_config(matrix: MatrixConfig, seed: int, p: float, variant: MatrixVariant) -> SimulationConfig:
    ibr = dataclasses.replace(
        matrix.base.ibr, shrink_schedule=default_schedule(variant.n_sc)
    )
    return dataclasses.replace(
        matrix.base,
        seed=seed,
        p_cooperative=p,
        density_veh_per_hour=variant.density_veh_per_hour,
        ibr=ibr,
    )


@dataclass
class MatrixResult:
    """Everything a sweep produced, in deterministic order."""

    runs: list[dict]
    comparisons: list[PairedComparison]
    skipped: list[dict]
    traces: dict[str, WorldTrace]


def _sorted_tasks(matrix: MatrixConfig) -> list[tuple[int, float, MatrixVariant]]:
    variants = sorted(matrix.variants, key=lambda v: (v.n_sc, v.density_veh_per_hour))
    return [
        (seed, p, variant)
        for variant in variants
        for seed in sorted(matrix.seeds)
        for p in sorted(matrix.proportions)
    ]


def run_experiment_matrix(
    matrix: MatrixConfig,
    out_dir: str | Path | None = None,
    progress: Callable[[str, str], None] | None = None,
) -> MatrixResult:
    """Run the whole sweep and, when out_dir is given, export all artifacts.

    Comparisons pair each p > 0 run with the p = 0 run of the same seed and
    variant. The reduction is ordered by (n_sc, density, seed, p) regardless
    of how the work pool finishes.
    """
    tasks = _sorted_tasks(matrix)
    configs = [build_run_config(matrix, seed, p, variant) for seed, p, variant in tasks]
    if matrix.jobs > 1:
        with ProcessPoolExecutor(max_workers=matrix.jobs) as pool:
            traces = list(pool.map(run_simulation, configs))
    else:
        traces = [run_simulation(config) for config in configs]

    by_key: dict[tuple, WorldTrace] = {}
    ids: dict[tuple, str] = {}
    for (seed, p, variant), trace in zip(tasks, traces):
        key = (variant.n_sc, variant.density_veh_per_hour, seed, p)
        by_key[key] = trace
        ids[key] = run_id(seed, p, variant.n_sc, variant.density_veh_per_hour)
        if progress is not None:
            progress(ids[key], trace.status)

    runs: list[dict] = []
    comparisons: list[PairedComparison] = []
    skipped: list[dict] = []
    metrics_cache: dict[tuple, RunMetrics] = {}
    for key in sorted(by_key):
        n_sc, density, seed, p = key
        trace = by_key[key]
        entry = {
            "run_id": ids[key],
            "seed": seed,
            "p_cooperative": p,
            "n_sc": n_sc,
            "density": density,
            "status": trace.status,
            "psi": None,
        }
        if trace.status == STATUS_COMPLETED:
            metrics_cache[key] = trace_metrics(trace)
        runs.append(entry)

    for key in sorted(by_key):
        n_sc, density, seed, p = key
        if p == 0.0:
            continue
        base_key = (n_sc, density, seed, 0.0)
        entry = next(r for r in runs if r["run_id"] == ids[key])
        if key not in metrics_cache:
            skipped.append(
                {"run_id": ids[key], "reason": f"run flagged {by_key[key].status!r}"}
            )
            continue
        if base_key not in by_key:
            skipped.append({"run_id": ids[key], "reason": "baseline missing for this seed"})
            continue
        if base_key not in metrics_cache:
            skipped.append(
                {
                    "run_id": ids[key],
                    "reason": f"baseline flagged {by_key[base_key].status!r}",
                }
            )
            continue
        comparison = compute_isi_psi(metrics_cache[key], metrics_cache[base_key])
        comparisons.append(comparison)
        entry["psi"] = comparison.psi

    result = MatrixResult(
        runs=runs,
        comparisons=comparisons,
        skipped=skipped,
        traces={ids[key]: by_key[key] for key in sorted(by_key)},
    )
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


def _comparison_key(comp: PairedComparison) -> tuple:
    return (comp.run.n_sc, comp.run.density, comp.run.seed, comp.run.p_cooperative)


def write_outputs(result: MatrixResult, out_dir: Path) -> dict[str, Path]:
    """Write traces, per-agent and per-run CSVs, quantile tables, and summary."""
    out_dir = Path(out_dir)
    traces_dir = out_dir / "traces"
    metrics_dir = out_dir / "metrics"
    data_dir = out_dir / "data"
    for d in (traces_dir, metrics_dir, data_dir):
        d.mkdir(parents=True, exist_ok=True)

    for rid in sorted(result.traces):
        save_trace(result.traces[rid], traces_dir / f"{rid}.jsonl")

    isi_path = metrics_dir / "isi.csv"
    with isi_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["seed", "p_cooperative", "n_sc", "density", "agent_id",
             "svo_theta", "v_max", "mean_speed", "baseline_speed", "isi"]
        )
        for comp in sorted(result.comparisons, key=_comparison_key):
            run = comp.run
            for aid in sorted(comp.isi):
                writer.writerow(
                    [run.seed, run.p_cooperative, run.n_sc, run.density, aid,
                     run.thetas[aid], run.v_maxes[aid], run.mean_speeds[aid],
                     comp.baseline.mean_speeds[aid], comp.isi[aid]]
                )

    psi_path = metrics_dir / "psi.csv"
    with psi_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "p_cooperative", "n_sc", "density", "n_agents", "excluded", "psi"])
        for comp in sorted(result.comparisons, key=_comparison_key):
            run = comp.run
            writer.writerow(
                [run.seed, run.p_cooperative, run.n_sc, run.density,
                 len(comp.isi), len(comp.excluded), comp.psi]
            )

    quantiles_path = data_dir / "quantiles_p.csv"
    with quantiles_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["n_sc", "density", "p_cooperative", "runs", "agents",
             "isi_mean", "isi_q1", "isi_median", "isi_q3",
             "psi_mean", "psi_q1", "psi_median", "psi_q3"]
        )
        cells: dict[tuple, list[PairedComparison]] = {}
        for comp in result.comparisons:
            cells.setdefault(
                (comp.run.n_sc, comp.run.density, comp.run.p_cooperative), []
            ).append(comp)
        for cell_key in sorted(cells):
            comps = cells[cell_key]
            isi = [v for comp in comps for v in comp.isi.values()]
            psi = [comp.psi for comp in comps]
            if not isi:
                continue
            iq1, imed, iq3 = np.percentile(isi, [25.0, 50.0, 75.0])
            pq1, pmed, pq3 = np.percentile(psi, [25.0, 50.0, 75.0])
            writer.writerow(
                [*cell_key, len(comps), len(isi),
                 float(np.mean(isi)), float(iq1), float(imed), float(iq3),
                 float(np.mean(psi)), float(pq1), float(pmed), float(pq3)]
            )

    subgroups = {}
    for grouping in GROUPINGS:
        report = subgroup_report(result.comparisons, grouping)
        subgroups[grouping] = {
            label: {
                "count": stats.count,
                "mean": None if math.isnan(stats.mean) else stats.mean,
                "q1": None if math.isnan(stats.q1) else stats.q1,
                "median": None if math.isnan(stats.median) else stats.median,
                "q3": None if math.isnan(stats.q3) else stats.q3,
            }
            for label, stats in report.items()
        }
    summary_path = out_dir / "summary.json"
    summary = {
        "schema": SUMMARY_SCHEMA,
        "runs": result.runs,
        "skipped": result.skipped,
        "subgroups": subgroups,
    }
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {
        "isi": isi_path,
        "psi": psi_path,
        "quantiles": quantiles_path,
        "summary": summary_path,
    }

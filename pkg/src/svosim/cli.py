"""Command-line front end: run one simulation or sweep a whole matrix.

Settings come from an optional JSON config file with flag overrides on top.
Output is machine readable: a single JSON report on stdout, and on failure a
JSON error record on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (
    MatrixConfig,
    MatrixVariant,
    run_experiment_matrix,
    run_id,
)
from .ibr import IbrConfig, default_schedule
from .metrics import trace_metrics
from .solver import SolverConfig
from .world import STATUS_COMPLETED, SimulationConfig, run_simulation, save_trace


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON settings file; flags override it")
    parser.add_argument("--seed", type=int, help="base random seed")
    parser.add_argument("--agents", type=int, help="number of vehicles")
    parser.add_argument("--density", type=float, help="traffic density in vehicles per hour")
    parser.add_argument("--p-cooperative", type=float, help="prosocial share in [0, 1]")
    parser.add_argument("--n-sc", type=int, help="shared-control neighbors in the first round")
    parser.add_argument("--steps", type=int, help="simulated sub-steps")
    parser.add_argument("--lanes", type=int, help="lane count")
    parser.add_argument(
        "--deterministic",
        type=_parse_bool,
        help="true for iteration-budgeted runs (reproducible), false for wall-clock budgets",
    )
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--jobs", type=int, help="work pool size for sweeps")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svosim",
        description="Semi-cooperative traffic simulation and cooperative-share sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common_flags(sub.add_parser("simulate", help="run one seeded simulation"))
    _add_common_flags(sub.add_parser("sweep", help="run a seeds x proportions matrix"))
    return parser


def load_settings(args: argparse.Namespace) -> dict:
    """File settings with explicit flags layered on top."""
    settings: dict = {}
    if args.config is not None:
        settings.update(json.loads(args.config.read_text()))
    overrides = {
        "seed": args.seed,
        "n_agents": args.agents,
        "density_veh_per_hour": args.density,
        "p_cooperative": args.p_cooperative,
        "n_sc": args.n_sc,
        "n_steps": args.steps,
        "lane_count": args.lanes,
        "deterministic": args.deterministic,
        "jobs": args.jobs,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return settings


def simulation_config(settings: dict) -> SimulationConfig:
    solver = SolverConfig(deterministic=settings.get("deterministic", True))
    ibr = IbrConfig(
        shrink_schedule=default_schedule(settings.get("n_sc", 1)),
        solver=solver,
    )
    kwargs = {
        key: settings[key]
        for key in (
            "seed",
            "n_agents",
            "density_veh_per_hour",
            "n_steps",
            "execute_steps",
            "p_cooperative",
            "theta_prosocial",
            "theta_egoistic",
            "lane_count",
            "lane_width",
            "road_length",
        )
        if key in settings
    }
    if "speed_range" in settings:
        kwargs["speed_range"] = tuple(settings["speed_range"])
    return SimulationConfig(ibr=ibr, **kwargs)


def matrix_config(settings: dict) -> MatrixConfig:
    base = simulation_config({k: v for k, v in settings.items() if k != "p_cooperative"})
    seeds = settings.get("seeds")
    if seeds is None:
        seeds = [settings["seed"]] if "seed" in settings else [0, 1, 2]
    proportions = settings.get("proportions", [0.0, 0.25, 0.5, 0.75, 1.0])
    raw_variants = settings.get("variants", [{}])
    variants = []
    for raw in raw_variants:
        variants.append(
            MatrixVariant(
                n_sc=settings.get("n_sc", raw.get("n_sc", 1)),
                density_veh_per_hour=settings.get(
                    "density_veh_per_hour", raw.get("density_veh_per_hour", 3000.0)
                ),
            )
        )
    return MatrixConfig(
        seeds=tuple(seeds),
        proportions=tuple(proportions),
        variants=tuple(dict.fromkeys(variants)),
        base=base,
        jobs=settings.get("jobs", 1),
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    settings = load_settings(args)
    config = simulation_config(settings)
    trace = run_simulation(config)
    rid = run_id(
        config.seed, config.p_cooperative, config.ibr.shrink_schedule[0],
        config.density_veh_per_hour,
    )
    report: dict = {"run_id": rid, "status": trace.status, "trace": None}
    if args.out is not None:
        traces_dir = Path(args.out) / "traces"
        traces_dir.mkdir(parents=True, exist_ok=True)
        report["trace"] = str(save_trace(trace, traces_dir / f"{rid}.jsonl"))
    if trace.status == STATUS_COMPLETED:
        metrics = trace_metrics(trace)
        report["population_mean_speed"] = metrics.population_mean
        report["mean_speeds"] = {str(a): v for a, v in metrics.mean_speeds.items()}
    else:
        report["error"] = trace.error
        report["collisions"] = trace.collisions
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if trace.status != "failed" else 1


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = load_settings(args)
    matrix = matrix_config(settings)
    result = run_experiment_matrix(matrix, out_dir=args.out)
    report = {
        "runs": len(result.runs),
        "comparisons": len(result.comparisons),
        "skipped": result.skipped,
        "out": str(args.out) if args.out is not None else None,
        "statuses": {r["run_id"]: r["status"] for r in result.runs},
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_sweep(args)
    except Exception as exc:
        record = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Speed metrics and paired comparisons against same-seed egoistic runs.

The unit of analysis is a completed trace. Each agent's mean speed is
compared with the same agent's mean speed in the fully egoistic run of the
same seed: the per-agent ratio and the population ratio of speed sums are
the two headline numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import STATUS_COMPLETED, WorldTrace

SPEED_MEDIAN_SPLIT = "speed-median-split"
PERSISTENT_EGOISTIC = "persistent-egoistic"
PERSISTENT_PROSOCIAL = "persistent-prosocial"
GROUPINGS = (SPEED_MEDIAN_SPLIT, PERSISTENT_EGOISTIC, PERSISTENT_PROSOCIAL)

PERSISTENT_REFERENCE_P = 0.5


class FlaggedTraceError(ValueError):
    """Raised when speed metrics are requested from an unusable trace."""


def _require_completed(trace: WorldTrace) -> None:
    if trace.status != STATUS_COMPLETED:
        reason = trace.error or (
            f"collisions at t={[c['t'] for c in trace.collisions]}" if trace.collisions else ""
        )
        raise FlaggedTraceError(f"trace is flagged {trace.status!r}: {reason}")


def average_speed(trace: WorldTrace, agent_id: int) -> float:
    """Mean recorded speed of one agent over executed sub-steps (t >= 1)."""
    _require_completed(trace)
    speeds = [row["v"] for row in trace.rows if row["agent_id"] == agent_id and row["t"] >= 1]
    if not speeds:
        raise ValueError(f"agent {agent_id} has no recorded steps")
    return float(np.mean(speeds))


@dataclass(frozen=True)
class RunMetrics:
    """Per-agent and population mean speeds of one completed run."""

    seed: int
    p_cooperative: float
    n_sc: int
    density: float
    spawn_checksum: str
    mean_speeds: dict[int, float]
    population_mean: float
    thetas: dict[int, float]
    v_maxes: dict[int, float]
    theta_prosocial: float
    theta_egoistic: float


def trace_metrics(trace: WorldTrace) -> RunMetrics:
    """Collapse a trace to its speed metrics, refusing flagged runs."""
    _require_completed(trace)
    speeds: dict[int, list[float]] = {}
    for row in trace.rows:
        if row["t"] >= 1:
            speeds.setdefault(row["agent_id"], []).append(row["v"])
    if not speeds:
        raise ValueError("trace has no executed steps")
    mean_speeds = {aid: float(np.mean(vs)) for aid, vs in sorted(speeds.items())}
    return RunMetrics(
        seed=trace.seed,
        p_cooperative=trace.config["p_cooperative"],
        n_sc=trace.config["ibr"]["shrink_schedule"][0],
        density=trace.config["density_veh_per_hour"],
        spawn_checksum=trace.spawn_checksum,
        mean_speeds=mean_speeds,
        population_mean=float(np.mean(list(mean_speeds.values()))),
        thetas={p["agent_id"]: p["svo_theta"] for p in trace.profiles},
        v_maxes={p["agent_id"]: p["v_max"] for p in trace.profiles},
        theta_prosocial=trace.config["theta_prosocial"],
        theta_egoistic=trace.config["theta_egoistic"],
    )


@dataclass(frozen=True)
class PairedComparison:
    """One run measured against the same-seed fully egoistic baseline."""

    run: RunMetrics
    baseline: RunMetrics
    isi: dict[int, float]
    psi: float
    excluded: tuple[int, ...]


def compute_isi_psi(run: RunMetrics, baseline: RunMetrics) -> PairedComparison:
    """Per-agent and population speed ratios of a run against its baseline.

    The pairing is validated hard: same seed, same agents, same spawn
    geometry and speed caps, and a fully egoistic baseline. Agents with a
    zero baseline speed cannot form a ratio; they are excluded and reported.
    """
    if run.seed != baseline.seed:
        raise ValueError("paired runs must share a seed")
    if set(run.mean_speeds) != set(baseline.mean_speeds):
        raise ValueError("paired runs must cover the same agents")
    if run.spawn_checksum != baseline.spawn_checksum:
        raise ValueError("paired runs must share spawn positions and speed caps")
    if baseline.p_cooperative != 0.0:
        raise ValueError("baseline must be fully egoistic (p_cooperative = 0)")
    isi: dict[int, float] = {}
    excluded: list[int] = []
    for aid in sorted(run.mean_speeds):
        v_e = baseline.mean_speeds[aid]
        if v_e == 0.0:
            excluded.append(aid)
        else:
            isi[aid] = run.mean_speeds[aid] / v_e
    total_base = sum(baseline.mean_speeds[aid] for aid in isi)
    total_run = sum(run.mean_speeds[aid] for aid in isi)
    if total_base == 0.0:
        raise ValueError("baseline population speed is zero")
    return PairedComparison(
        run=run, baseline=baseline, isi=isi, psi=total_run / total_base, excluded=tuple(excluded)
    )


@dataclass(frozen=True)
class GroupStats:
    """Distribution summary of ISI values in one agent group."""

    label: str
    count: int
    mean: float
    q1: float
    median: float
    q3: float
    values: tuple[float, ...]


def _stats(label: str, values: list[float]) -> GroupStats:
    if not values:
        return GroupStats(label, 0, math.nan, math.nan, math.nan, math.nan, ())
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
    return GroupStats(
        label, len(values), float(np.mean(values)), float(q1), float(med), float(q3), tuple(values)
    )


def _is_prosocial(run: RunMetrics, aid: int) -> bool:
    theta = run.thetas[aid]
    return abs(theta - run.theta_prosocial) < abs(theta - run.theta_egoistic)


def subgroup_report(
    comparisons: list[PairedComparison], grouping: str
) -> dict[str, GroupStats]:
    """ISI distributions for a named agent grouping.

    speed-median-split pools every comparison and splits each run's agents
    at the median of their spawn-time speed caps. The persistent groupings
    read only the half-prosocial runs, where staying egoistic or prosocial
    is meaningful, and group by the preference held there. Empty groups are
    reported with a zero count rather than raised.
    """
    if grouping not in GROUPINGS:
        raise ValueError(f"unknown grouping {grouping!r}")
    if grouping == SPEED_MEDIAN_SPLIT:
        low: list[float] = []
        high: list[float] = []
        for comp in comparisons:
            ordered = sorted(comp.isi, key=lambda a: (comp.run.v_maxes[a], a))
            half = (len(ordered) + 1) // 2
            low.extend(comp.isi[a] for a in ordered[:half])
            high.extend(comp.isi[a] for a in ordered[half:])
        return {"low-v-max": _stats("low-v-max", low), "high-v-max": _stats("high-v-max", high)}

    want_prosocial = grouping == PERSISTENT_PROSOCIAL
    values: list[float] = []
    for comp in comparisons:
        if comp.run.p_cooperative in (0.0, 1.0):
            continue
        if comp.run.p_cooperative != PERSISTENT_REFERENCE_P:
            continue
        for aid, ratio in comp.isi.items():
            if _is_prosocial(comp.run, aid) == want_prosocial:
                values.append(ratio)
    return {grouping: _stats(grouping, values)}


def lane_change_events(trace: WorldTrace) -> list[dict]:
    """Sub-steps where an agent's nearest lane index changes."""
    width = trace.config["lane_width"]
    count = trace.config["lane_count"]

    def lane_of(y: float) -> int:
        return int(np.clip(round(y / width), 0, count - 1))

    events = []
    last: dict[int, int] = {}
    for row in sorted(trace.rows, key=lambda r: (r["t"], r["agent_id"])):
        lane = lane_of(row["y"])
        aid = row["agent_id"]
        if aid in last and lane != last[aid]:
            events.append({"t": row["t"], "agent_id": aid, "from": last[aid], "to": lane})
        last[aid] = lane
    return events

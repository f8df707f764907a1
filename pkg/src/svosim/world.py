"""Seeded highway populations, receding-horizon execution, and run traces.

A run spawns a Poisson-spaced population, assigns social preferences to a
seeded subset, then alternates coordination passes with short executed
bursts of each agent's plan. Everything needed to recompute metrics offline
lands in a JSON-lines trace.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import ControlInput, VehicleGeometry, VehicleState, step
from .ibr import IbrConfig, PlanSet, run_ibr
from .rewards import AgentProfile
from .road import RoadSpec, lane_center
from .safety import collision_check
from .solver import AgentView, WorldSnapshot

SCHEMA_TAG = "svosim-trace-v1"
MIN_SPACING_LENGTHS = 1.5

STATUS_COMPLETED = "completed"
STATUS_COLLIDED = "collided"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class SimulationConfig:
    """One run: population, density, preference mix, and step counts."""

    seed: int = 0
    n_agents: int = 8
    density_veh_per_hour: float = 3000.0
    n_steps: int = 500
    execute_steps: int = 2
    p_cooperative: float = 0.0
    theta_prosocial: float = math.pi / 4.0
    theta_egoistic: float = 0.05
    speed_range: tuple[float, float] = (11.2, 13.4)
    lane_count: int = 3
    lane_width: float = 3.7
    road_length: float | None = None  # sized from the spawn when omitted
    ibr: IbrConfig = field(default_factory=IbrConfig)

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise ValueError("n_agents must be at least 1")
        if self.density_veh_per_hour <= 0.0:
            raise ValueError("density must be positive")
        if self.n_steps < 1 or self.execute_steps < 1:
            raise ValueError("step counts must be positive")
        if self.execute_steps > self.ibr.solver.horizon:
            raise ValueError("execute_steps cannot exceed the plan horizon")
        if not 0.0 <= self.p_cooperative <= 1.0:
            raise ValueError("p_cooperative must lie in [0, 1]")
        lo, hi = self.speed_range
        if not 0.0 < lo <= hi:
            raise ValueError("speed_range must be increasing and positive")

    @property
    def deterministic(self) -> bool:
        return self.ibr.solver.deterministic


@dataclass(frozen=True)
class WorldState:
    """Positions and profiles of every agent at one sub-step."""

    step: int
    states: dict[int, VehicleState]
    profiles: dict[int, AgentProfile]
    road: RoadSpec

    def snapshot(self) -> WorldSnapshot:
        agents = tuple(
            AgentView(aid, self.states[aid], self.profiles[aid]) for aid in sorted(self.states)
        )
        return WorldSnapshot(road=self.road, agents=agents)


@dataclass(frozen=True)
class WorldTrace:
    """Serialized form of one run; every field is JSON-native.

    rows holds one record per agent per sub-step, including the spawn states
    at t=0; diagnostics holds one record per coordination pass plus one per
    agent plan. Collision-terminated runs keep their rows but are flagged so
    the metrics layer can refuse them.
    """

    seed: int
    config: dict
    profiles: list[dict]
    spawn_checksum: str
    rows: list[dict]
    diagnostics: list[dict]
    collisions: list[dict]
    status: str
    error: str | None


def mean_spawn_gap(density_veh_per_hour: float, lane_count: int, v_nominal: float) -> float:
    """Average longitudinal spacing that realizes the requested density."""
    return v_nominal * 3600.0 * lane_count / density_veh_per_hour


def spawn_vehicles(
    seed: int,
    n_agents: int,
    density_veh_per_hour: float,
    road: RoadSpec,
    speed_range: tuple[float, float] = (11.2, 13.4),
    theta_default: float = 0.05,
) -> WorldState:
    """Draw a seeded population along the road.

    Lanes are dealt round-robin in a shuffled order; spacings within a lane
    are exponential around the density-implied mean, floored at 1.5 vehicle
    lengths; each agent starts lane-centered at its own drawn speed cap.
    """
    if n_agents < 1:
        raise ValueError("n_agents must be at least 1")
    if density_veh_per_hour <= 0.0:
        raise ValueError("density must be positive")
    lo, hi = speed_range
    rng = np.random.default_rng(seed)
    lane_order = rng.permutation(road.lane_count)
    gaps = rng.exponential(
        mean_spawn_gap(density_veh_per_hour, road.lane_count, (lo + hi) / 2.0), size=n_agents
    )
    v_caps = rng.uniform(lo, hi, size=n_agents)

    geometry = VehicleGeometry()
    min_gap = MIN_SPACING_LENGTHS * geometry.length
    lane_front: dict[int, float] = {}
    states: dict[int, VehicleState] = {}
    profiles: dict[int, AgentProfile] = {}
    for aid in range(n_agents):
        lane = int(lane_order[aid % road.lane_count])
        x = lane_front.get(lane, 0.0) + max(float(gaps[aid]), min_gap)
        lane_front[lane] = x
        states[aid] = VehicleState(
            x=x, y=lane_center(road, lane), phi=0.0, delta=0.0, v=float(v_caps[aid])
        )
        profiles[aid] = AgentProfile(svo_theta=theta_default, v_max=float(v_caps[aid]))

    required = max(s.x for s in states.values()) + geometry.length
    if required > road.length:
        raise ValueError(
            f"road too short for the population: need at least {required:.1f} m,"
            f" have {road.length:.1f} m"
        )
    return WorldState(step=0, states=states, profiles=profiles, road=road)


def assign_population(
    world: WorldState,
    seed: int,
    p_cooperative: float,
    theta_prosocial: float = math.pi / 4.0,
    theta_egoistic: float = 0.05,
) -> WorldState:
    """Mark a seeded share of the population prosocial, the rest egoistic.

    Exactly round(p * n) agents (half up) take the prosocial angle. The
    seeded permutation is drawn once, so the prosocial set grows by
    inclusion as p rises under a fixed seed.
    """
    if not 0.0 <= p_cooperative <= 1.0:
        raise ValueError("p_cooperative must lie in [0, 1]")
    ids = sorted(world.states)
    count = int(math.floor(p_cooperative * len(ids) + 0.5))
    order = np.random.default_rng(seed).permutation(len(ids))
    prosocial = {ids[k] for k in order[:count]}
    profiles = {
        aid: dataclasses.replace(
            profile,
            svo_theta=theta_prosocial if aid in prosocial else theta_egoistic,
        )
        for aid, profile in world.profiles.items()
    }
    return WorldState(step=world.step, states=world.states, profiles=profiles, road=world.road)


def spawn_checksum(world: WorldState) -> str:
    """Digest of the spawn geometry and speed caps, ignoring preferences.

    Paired runs at different cooperative shares must agree on this value:
    the pairing is meaningful only when positions and speed caps match.
    """
    payload = [
        (aid, world.states[aid].x, world.states[aid].y, world.profiles[aid].v_max)
        for aid in sorted(world.states)
    ]
    return hashlib.sha256(json.dumps(payload).encode()).hexdigest()


def _execute_burst(world: WorldState, plan_set: PlanSet, execute_steps: int, dt: float):
    """Yield (world after sub-step, controls applied, collision events).

    Stops after the sub-step on which a collision first appears so callers
    see the colliding state but nothing past it.
    """
    ids = sorted(world.states)
    for aid in ids:
        if plan_set.plans[aid].controls.shape[0] < execute_steps:
            raise ValueError("plan horizon shorter than execute_steps")
    current = world
    for s in range(execute_steps):
        states = {}
        controls = {}
        for aid in ids:
            u = plan_set.plans[aid].controls[s]
            controls[aid] = np.asarray(u, dtype=float)
            states[aid] = step(
                current.states[aid],
                ControlInput(float(u[0]), float(u[1])),
                dt,
                current.profiles[aid].geometry,
                current.profiles[aid].limits,
            )
        current = WorldState(
            step=current.step + 1, states=states, profiles=current.profiles, road=current.road
        )
        events = []
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                if collision_check(
                    states[a], states[b], current.profiles[a].geometry, current.profiles[b].geometry
                ):
                    events.append({"t": current.step, "agent_a": a, "agent_b": b})
        yield current, controls, events
        if events:
            return


def step_world(
    world: WorldState,
    plan_set: PlanSet,
    execute_steps: int,
    dt: float,
) -> tuple[WorldState, dict[int, np.ndarray], list[dict]]:
    """Advance every agent through the first sub-steps of its plan.

    All pairs are collision-checked after each sub-step; on a hit the
    executed controls are truncated there and the events are returned for
    the caller to flag the run.
    """
    executed: dict[int, list[np.ndarray]] = {aid: [] for aid in world.states}
    events: list[dict] = []
    current = world
    for current, controls, hits in _execute_burst(world, plan_set, execute_steps, dt):
        for aid, u in controls.items():
            executed[aid].append(u)
        events.extend(hits)
    controls_out = {aid: np.array(seq).reshape(-1, 2) for aid, seq in executed.items()}
    return current, controls_out, events


def sized_road(config: SimulationConfig) -> RoadSpec:
    """Road for a run: explicit length, or spawn extent plus cruise headroom."""
    if config.road_length is not None:
        return RoadSpec(config.lane_count, config.lane_width, config.road_length)
    probe = RoadSpec(config.lane_count, config.lane_width, 1e9)
    world = spawn_vehicles(
        config.seed, config.n_agents, config.density_veh_per_hour, probe, config.speed_range
    )
    extent = max(s.x for s in world.states.values())
    dt = config.ibr.solver.dt
    headroom = config.speed_range[1] * config.n_steps * dt
    return RoadSpec(
        config.lane_count,
        config.lane_width,
        extent + VehicleGeometry().length + headroom + 10.0,
    )


def _config_record(config: SimulationConfig, road: RoadSpec) -> dict:
    solver = config.ibr.solver
    return {
        "seed": config.seed,
        "n_agents": config.n_agents,
        "density_veh_per_hour": config.density_veh_per_hour,
        "n_steps": config.n_steps,
        "execute_steps": config.execute_steps,
        "p_cooperative": config.p_cooperative,
        "theta_prosocial": config.theta_prosocial,
        "theta_egoistic": config.theta_egoistic,
        "speed_range": list(config.speed_range),
        "lane_count": road.lane_count,
        "lane_width": road.lane_width,
        "road_length": road.length,
        "ibr": {
            "shrink_schedule": list(config.ibr.shrink_schedule),
            "interaction_radius": config.ibr.interaction_radius,
            "delta_conv": config.ibr.delta_conv,
            "agent_order": config.ibr.agent_order,
            "order_seed": config.ibr.order_seed,
        },
        "solver": {
            "horizon": solver.horizon,
            "dt": solver.dt,
            "eps_feasible": solver.eps_feasible,
            "deterministic": solver.deterministic,
            "total_iterations": solver.total_iterations,
            "time_limit": solver.time_limit,
            "stage_mu": list(solver.stage_mu),
            "stage_iterations": list(solver.stage_iterations),
            "margin": solver.margin,
        },
    }


def _profile_records(world: WorldState) -> list[dict]:
    return [
        {
            "agent_id": aid,
            "svo_theta": world.profiles[aid].svo_theta,
            "v_max": world.profiles[aid].v_max,
        }
        for aid in sorted(world.profiles)
    ]


def _state_rows(t: int, world: WorldState, controls, violations) -> list[dict]:
    rows = []
    for aid in sorted(world.states):
        s = world.states[aid]
        u = controls.get(aid, (0.0, 0.0)) if controls else (0.0, 0.0)
        rows.append(
            {
                "t": t,
                "agent_id": aid,
                "x": s.x,
                "y": s.y,
                "phi": s.phi,
                "delta": s.delta,
                "v": s.v,
                "delta_u": float(u[0]),
                "v_u": float(u[1]),
                "violation": float(violations.get(aid, 0.0)) if violations else 0.0,
            }
        )
    return rows


def run_simulation(config: SimulationConfig) -> WorldTrace:
    """Spawn, assign preferences, and run the replan/execute loop to the end.

    The trace always comes back: collisions terminate the run with the
    status flagged, and any other failure is recorded on the trace instead
    of raised.
    """
    road = sized_road(config)
    cfg_record = _config_record(config, road)
    try:
        world = spawn_vehicles(
            config.seed, config.n_agents, config.density_veh_per_hour, road, config.speed_range
        )
        world = assign_population(
            world, config.seed, config.p_cooperative, config.theta_prosocial, config.theta_egoistic
        )
    except ValueError as exc:
        return WorldTrace(
            seed=config.seed,
            config=cfg_record,
            profiles=[],
            spawn_checksum="",
            rows=[],
            diagnostics=[],
            collisions=[],
            status=STATUS_FAILED,
            error=str(exc),
        )

    checksum = spawn_checksum(world)
    profiles = _profile_records(world)
    rows = _state_rows(0, world, None, None)
    diagnostics: list[dict] = []
    collisions: list[dict] = []
    status = STATUS_COMPLETED
    error: str | None = None
    dt = config.ibr.solver.dt
    try:
        t = 0
        while t < config.n_steps:
            t_plan = t
            plan_set = run_ibr(world.snapshot(), config.ibr)
            diagnostics.append(
                {
                    "kind": "pass",
                    "t": t_plan,
                    "rounds": plan_set.rounds_run,
                    "converged": plan_set.converged,
                    "failures": len(plan_set.failures),
                }
            )
            for aid in sorted(plan_set.plans):
                plan = plan_set.plans[aid]
                wall = None
                if not config.deterministic:
                    wall = sum(times.get(aid, 0.0) for times in plan_set.wall_times)
                diagnostics.append(
                    {
                        "kind": "plan",
                        "t": t_plan,
                        "agent_id": aid,
                        "maneuver": plan.maneuver,
                        "violation": plan_set.final_violations[aid],
                        "optimized": plan.optimized,
                        "converged": plan.converged,
                        "wall_time": wall,
                    }
                )
            burst = min(config.execute_steps, config.n_steps - t)
            hit = False
            for world, controls, events in _execute_burst(world, plan_set, burst, dt):
                rows.extend(
                    _state_rows(world.step, world, controls, plan_set.final_violations)
                )
                if events:
                    collisions.extend(events)
                    hit = True
            t = world.step
            if hit:
                status = STATUS_COLLIDED
                break
    except Exception as exc:
        status = STATUS_FAILED
        error = repr(exc)
    return WorldTrace(
        seed=config.seed,
        config=cfg_record,
        profiles=profiles,
        spawn_checksum=checksum,
        rows=rows,
        diagnostics=diagnostics,
        collisions=collisions,
        status=status,
        error=error,
    )


def save_trace(trace: WorldTrace, path: str | Path) -> Path:
    """Write one JSON-lines file: header first, then states, then diagnostics."""
    path = Path(path)
    header = {
        "schema": SCHEMA_TAG,
        "kind": "header",
        "seed": trace.seed,
        "config": trace.config,
        "profiles": trace.profiles,
        "spawn_checksum": trace.spawn_checksum,
        "collisions": trace.collisions,
        "status": trace.status,
        "error": trace.error,
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header) + "\n")
        for row in trace.rows:
            fh.write(json.dumps({"kind": "state", **row}) + "\n")
        for record in trace.diagnostics:
            fh.write(json.dumps(record) + "\n")
    return path


def load_trace(path: str | Path) -> WorldTrace:
    rows: list[dict] = []
    diagnostics: list[dict] = []
    header: dict | None = None
    with Path(path).open() as fh:
        for line in fh:
            record = json.loads(line)
            kind = record.pop("kind", None)
            if kind == "header":
                if record.get("schema") != SCHEMA_TAG:
                    raise ValueError(f"unsupported trace schema {record.get('schema')!r}")
                header = record
            elif kind == "state":
                rows.append(record)
            else:
                diagnostics.append({"kind": kind, **record})
    if header is None:
        raise ValueError("trace file has no header record")
    return WorldTrace(
        seed=header["seed"],
        config=header["config"],
        profiles=header["profiles"],
        spawn_checksum=header["spawn_checksum"],
        rows=rows,
        diagnostics=diagnostics,
        collisions=header["collisions"],
        status=header["status"],
        error=header["error"],
    )

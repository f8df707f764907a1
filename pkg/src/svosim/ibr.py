"""Iterative best response over a group of planning agents.

Agents take turns re-solving their own maneuver against the latest plans of
everyone nearby. Early rounds let the solving agent co-optimize its nearest
neighbors' controls as if it could steer them (the imagined co-solutions are
thrown away; only the solving agent adopts anything), and the shared set
shrinks to zero over the rounds so the final pass is a pure best response
against fixed predictions.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .dynamics import ControlInput, rollout
from .rewards import states_array
from .solver import (
    AgentView,
    FixedPlan,
    SolveBudget,
    SolveCandidate,
    SolverConfig,
    WorldSnapshot,
    assemble_problem,
    bound_defect,
    rollout_defect,
    select_solution,
    separation_defect,
    solve_time_limited,
)
from .trajectories import (
    KEEP_LANE,
    DesiredTrajectory,
    WarmStart,
    generate_bank,
    generate_warm_starts,
    keep_lane_trajectory,
)

FRONT_TO_BACK = "front-to-back"
RANDOM_PER_ROUND = "random-per-round"

Observer = Callable[[int, int, dict[int, "AgentPlan"]], None]


def default_schedule(n_sc: int) -> tuple[int, ...]:
    """Shrinking shared-set sizes ending in a pure best-response round."""
    if n_sc < 0:
        raise ValueError("shared-control count must be non-negative")
    if n_sc == 0:
        return (0,)
    if n_sc == 1:
        return (1, 0)
    return (n_sc, math.ceil(n_sc / 2), 0)


@dataclass(frozen=True)
class IbrConfig:
    """Coordination settings shared by every agent in a planning pass."""

    shrink_schedule: tuple[int, ...] = (1, 0)
    interaction_radius: float = 50.0
    delta_conv: float = 1e-2
    agent_order: str = FRONT_TO_BACK
    order_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self) -> None:
        sched = self.shrink_schedule
        if not sched:
            raise ValueError("shrink_schedule must have at least one round")
        if any(s < 0 for s in sched) or sched[-1] != 0:
            raise ValueError("shrink_schedule must be non-negative and end at 0")
        if any(a < b for a, b in zip(sched, sched[1:])):
            raise ValueError("shrink_schedule must be non-increasing")
        if self.interaction_radius <= 0.0:
            raise ValueError("interaction_radius must be positive")
        if self.delta_conv <= 0.0:
            raise ValueError("delta_conv must be positive")
        if self.agent_order not in (FRONT_TO_BACK, RANDOM_PER_ROUND):
            raise ValueError(f"unknown agent_order {self.agent_order!r}")

    @classmethod
    def from_shared_count(cls, n_sc: int, **kwargs) -> "IbrConfig":
        return cls(shrink_schedule=default_schedule(n_sc), **kwargs)


@dataclass(frozen=True)
class AgentPlan:
    """One agent's adopted open-loop plan plus solve diagnostics."""

    agent_id: int
    controls: np.ndarray  # (T, 2)
    states: np.ndarray  # (T+1, 5)
    maneuver: str
    objective: float
    violation: float
    optimized: bool
    converged: bool

    def __post_init__(self) -> None:
        for name in ("controls", "states"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class PlanSet:
    """Outcome of one coordination pass.

    change_norms and wall_times have one mapping per executed round; agents
    whose replan raised are recorded in failures and keep their prior plan.
    converged is True when every final plan stays within the solver's
    feasibility tolerance against the final plans of all others.
    """

    plans: dict[int, AgentPlan]
    rounds_run: int
    change_norms: tuple[dict[int, float], ...]
    wall_times: tuple[dict[int, float], ...]
    failures: tuple[tuple[int, int, str], ...]
    final_violations: dict[int, float]
    converged: bool


def neighborhood(
    agent_id: int, snapshot: WorldSnapshot, size: int, radius: float
) -> tuple[int, ...]:
    """Ids of the `size` nearest other agents within `radius`, closest first.

    Equal distances break toward the lower id so the result is stable under
    agent relabeling of the remaining ties.
    """
    me = snapshot.view(agent_id).state
    ranked = []
    for other in snapshot.agents:
        if other.agent_id == agent_id:
            continue
        d = math.hypot(other.state.x - me.x, other.state.y - me.y)
        if d <= radius:
            ranked.append((d, other.agent_id))
    ranked.sort()
    return tuple(aid for _, aid in ranked[: max(size, 0)])


def initial_plan(view: AgentView, snapshot: WorldSnapshot, config: SolverConfig) -> AgentPlan:
    """Keep-lane seed plan for one agent.

    The controls come from the keep-lane warm start; the states are re-rolled
    through the exact dynamics so the seed carries no rollout defect even
    when the warm start sampled the reference instead of integrating.
    """
    geom, limits = view.profile.geometry, view.profile.limits
    keep = keep_lane_trajectory(view.state, snapshot.road)
    seed = generate_warm_starts(view.state, [keep], None, config.horizon, config.dt, geom, limits)[0]
    inputs = [ControlInput(*u) for u in seed.controls]
    states = states_array(rollout(view.state, inputs, config.dt, geom, limits))
    return AgentPlan(
        agent_id=view.agent_id,
        controls=seed.controls,
        states=states,
        maneuver=KEEP_LANE,
        objective=math.nan,
        violation=math.nan,
        optimized=False,
        converged=False,
    )


def _warm_start_pool(
    view: AgentView, bank: list[DesiredTrajectory], config: SolverConfig
) -> list[tuple[DesiredTrajectory, list[WarmStart]]]:
    """Pair each maneuver reference with its warm starts.

    Every maneuver gets its state-seeded guess plus a coast rollout; the
    keep-lane maneuver also gets the brake and throttle probes since it is
    the one solved when boxed in.
    """
    geom, limits = view.profile.geometry, view.profile.limits
    starts = generate_warm_starts(view.state, bank, None, config.horizon, config.dt, geom, limits)
    seeded, extras = starts[: len(bank)], starts[len(bank) :]
    coast = extras[0]
    pool = []
    for traj, ws in zip(bank, seeded):
        shared_extras = extras if traj.label == KEEP_LANE else [coast]
        pool.append((traj, [ws, *shared_extras]))
    return pool


def replan_agent(
    agent_id: int,
    snapshot: WorldSnapshot,
    plans: Mapping[int, AgentPlan],
    size: int,
    config: IbrConfig,
) -> tuple[AgentPlan, list[SolveCandidate]]:
    """Best response of one agent against the latest plans of the others.

    All agents within the interaction radius join the problem; the `size`
    nearest become shared (co-optimized, with their current plans as the
    initial guess) and the rest stay fixed to their predicted rollouts. Each
    maneuver in the reference bank is solved under one pooled iteration
    budget and a single winner is picked across all candidates.
    """
    cfg = config.solver
    view = snapshot.view(agent_id)
    visible = neighborhood(agent_id, snapshot, len(snapshot.agents), config.interaction_radius)
    shared = neighborhood(agent_id, snapshot, size, config.interaction_radius)
    local = WorldSnapshot(
        road=snapshot.road,
        agents=tuple(a for a in snapshot.agents if a.agent_id == agent_id or a.agent_id in visible),
    )
    predictions = {
        aid: FixedPlan(controls=plans[aid].controls, states=plans[aid].states) for aid in visible
    }
    bank = generate_bank(view.state, snapshot.road)
    budget = SolveBudget.from_config(cfg)
    pooled: list[SolveCandidate] = []
    for desired, warm_starts in _warm_start_pool(view, bank, cfg):
        problem = assemble_problem(
            agent_id, local, desired, cfg, shared_ids=shared, predictions=predictions
        )
        for cand in solve_time_limited(problem, warm_starts, budget):
            pooled.append(dataclasses.replace(cand, index=len(pooled)))
    winner = select_solution(pooled, cfg)
    plan = AgentPlan(
        agent_id=agent_id,
        controls=winner.controls[agent_id],
        states=winner.states[agent_id],
        maneuver=winner.maneuver,
        objective=winner.objective,
        violation=winner.violation,
        optimized=winner.optimized,
        converged=winner.converged,
    )
    return plan, pooled


def _round_order(snapshot: WorldSnapshot, config: IbrConfig, round_index: int) -> list[int]:
    ids = sorted(a.agent_id for a in snapshot.agents)
    if config.agent_order == RANDOM_PER_ROUND:
        rng = np.random.default_rng((config.order_seed, round_index))
        return [ids[k] for k in rng.permutation(len(ids))]
    by_position = sorted(snapshot.agents, key=lambda a: (-a.state.x, a.agent_id))
    return [a.agent_id for a in by_position]


def final_violations(
    snapshot: WorldSnapshot, plans: Mapping[int, AgentPlan], config: IbrConfig
) -> dict[int, float]:
    """Per-agent constraint violation of each plan against all final plans."""
    cfg = config.solver
    states = {aid: plan.states for aid, plan in plans.items()}
    geoms = {a.agent_id: a.profile.geometry for a in snapshot.agents}
    out: dict[int, float] = {}
    for agent in snapshot.agents:
        aid = agent.agent_id
        plan = plans[aid]
        start = plan.states[0] - np.asarray(agent.state.as_tuple())
        total = float(start @ start)
        total += rollout_defect(plan.states, plan.controls, geoms[aid], agent.profile.limits, cfg.dt)
        total += bound_defect(plan.controls, agent.profile.limits)
        total += separation_defect([aid], states, geoms, cfg.margin)
        out[aid] = total
    return out


def run_ibr(
    snapshot: WorldSnapshot,
    config: IbrConfig,
    observer: Observer | None = None,
) -> PlanSet:
    """Coordinate every agent in the snapshot through the shrink schedule.

    Each round walks the agents in order; the solving agent adopts only its
    own slice of the winning candidate, so plans stored for other agents are
    never touched by someone else's solve. A replan that raises keeps the
    prior plan and is recorded. The pass stops early once a full failure-free
    round moves no plan by more than delta_conv in control norm.
    """
    if not snapshot.agents:
        raise ValueError("snapshot has no agents")
    plans = {a.agent_id: initial_plan(a, snapshot, config.solver) for a in snapshot.agents}
    change_norms: list[dict[int, float]] = []
    wall_times: list[dict[int, float]] = []
    failures: list[tuple[int, int, str]] = []
    rounds_run = 0
    for round_index, size in enumerate(config.shrink_schedule):
        norms: dict[int, float] = {}
        times: dict[int, float] = {}
        round_failed = False
        for agent_id in _round_order(snapshot, config, round_index):
            previous = plans[agent_id]
            try:
                plan, candidates = replan_agent(agent_id, snapshot, plans, size, config)
            except Exception as exc:  # a stuck agent must not sink the round
                failures.append((round_index, agent_id, repr(exc)))
                round_failed = True
            else:
                norms[agent_id] = float(
                    np.linalg.norm(plan.controls - previous.controls)
                )
                times[agent_id] = sum(c.wall_time for c in candidates)
                plans[agent_id] = plan
            if observer is not None:
                observer(round_index, agent_id, dict(plans))
        change_norms.append(norms)
        wall_times.append(times)
        rounds_run = round_index + 1
        if not round_failed and norms and max(norms.values()) <= config.delta_conv:
            break
    violations = final_violations(snapshot, plans, config)
    converged = all(v <= config.solver.eps_feasible for v in violations.values())
    return PlanSet(
        plans=plans,
        rounds_run=rounds_run,
        change_norms=tuple(change_norms),
        wall_times=tuple(wall_times),
        failures=tuple(failures),
        final_violations=violations,
        converged=converged,
    )

"""Best-response solver for one agent's semi-cooperative planning problem.

One problem optimizes the control sequences of the ego agent plus any agents
it imagines sharing control over, against fixed predicted rollouts of the
remaining agents. The socially weighted objective is maximized with a
penalty-method sequence of box-constrained quasi-Newton solves; each warm
start yields one candidate, and the selection rule prefers the best feasible
candidate, falling back to a violation-discounted score when none is
feasible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .dynamics import ControlLimits, VehicleGeometry, VehicleState, normalize_angle
from .objective import FixedAgentData, ObjectiveEngine, SolvedAgentData
from .rewards import AgentProfile, REWARD_GAP_FLOOR
from .road import RoadSpec
from .safety import TtcParams, ellipse_separation
from .trajectories import DesiredTrajectory, WarmStart, keep_lane_trajectory


@dataclass(frozen=True)
class SolverConfig:
    horizon: int = 10  # planning steps
    dt: float = 0.2  # s
    eps_feasible: float = 1e-3  # violation below this counts as feasible
    k_slack: float = 1e3  # violation weight when nothing is feasible
    time_limit: float = 2.0  # s, wall-clock replanning budget
    deterministic: bool = True  # budget by iteration count, not wall clock
    total_iterations: int = 160  # iteration budget per replanning pass
    stage_mu: tuple[float, ...] = (40.0, 400.0, 4000.0)  # penalty weights
    stage_iterations: tuple[int, ...] = (6, 5, 5)  # iterations per stage
    wall_chunk: int = 4  # iterations between deadline checks
    margin: float = 0.3  # m, keep-out ellipse inflation
    gap_floor: float = REWARD_GAP_FLOOR  # m, TTC gap clamp inside the solver
    ttc: TtcParams = TtcParams()
    use_gradients: bool = True  # hand-coded gradients; off falls back to FD

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.dt <= 0.0 or self.time_limit <= 0.0:
            raise ValueError("dt and time_limit must be positive")
        if self.eps_feasible < 0.0 or self.k_slack < 0.0:
            raise ValueError("eps_feasible and k_slack must be non-negative")
        if len(self.stage_mu) != len(self.stage_iterations):
            raise ValueError("stage_mu and stage_iterations must pair up")
        if self.total_iterations < 1 or any(n < 1 for n in self.stage_iterations):
            raise ValueError("iteration budgets must be positive")
        if self.wall_chunk < 1:
            raise ValueError("wall_chunk must be positive")


@dataclass(frozen=True)
class AgentView:
    """Observable planning inputs for one agent."""

    agent_id: int
    state: VehicleState
    profile: AgentProfile


@dataclass(frozen=True)
class FixedPlan:
    """Predicted rollout of an agent that is not re-planned."""

    controls: np.ndarray  # (T, 2)
    states: np.ndarray  # (T+1, 5)


@dataclass(frozen=True)
class WorldSnapshot:
    road: RoadSpec
    agents: tuple[AgentView, ...]

    def view(self, agent_id: int) -> AgentView:
        for agent in self.agents:
            if agent.agent_id == agent_id:
                return agent
        raise KeyError(f"agent {agent_id} not in snapshot")


@dataclass
class BestResponseProblem:
    ego_id: int
    solved_ids: tuple[int, ...]  # ego first, then shared agents
    views: dict[int, AgentView]
    shared_init: dict[int, np.ndarray]  # initial controls of shared agents
    fixed_plans: dict[int, FixedPlan]
    desired: dict[int, DesiredTrajectory]
    coeffs: dict[int, float]
    config: SolverConfig
    road: RoadSpec


@dataclass
class SolveCandidate:
    """One scored solution attempt of a best-response problem."""

    index: int
    label: str
    maneuver: str
    provenance: str
    controls: dict[int, np.ndarray]
    states: dict[int, np.ndarray]
    objective: float
    violation: float
    optimized: bool
    converged: bool
    wall_time: float


def joint_coefficients(
    views: Mapping[int, AgentView], solved_ids: Sequence[int]
) -> dict[int, float]:
    """Per-agent reward multipliers of the pooled social objective.

    Summing each solved agent's social utility over the others makes agent
    m's reward appear once per solved utility: weighted by cos(theta) in its
    own utility and by sin(theta) in every other solved agent's. A lone agent
    keeps the cos(theta) weight on its own reward.
    """
    ids = sorted(views)
    solved = set(solved_ids)
    coeffs: dict[int, float] = {}
    for m in ids:
        c = 0.0
        if m in solved:
            profile = views[m].profile
            others = [j for j in ids if j != m]
            if others:
                c += sum(math.cos(profile.pair_theta(j)) for j in others)
            else:
                c += math.cos(profile.svo_theta)
        for a in solved_ids:
            if a != m:
                c += math.sin(views[a].profile.pair_theta(m))
        coeffs[m] = c
    return coeffs


def assemble_problem(
    ego_id: int,
    snapshot: WorldSnapshot,
    desired: DesiredTrajectory,
    config: SolverConfig,
    shared_ids: Sequence[int] = (),
    predictions: Mapping[int, FixedPlan] | None = None,
) -> BestResponseProblem:
    """Bind one maneuver of the ego agent to a solvable problem.

    Every agent in the snapshot participates; callers pre-filter to the
    interaction neighborhood. Agents that are neither the ego nor shared must
    come with a predicted rollout. Shared agents may supply one, which then
    seeds their control variables. All non-ego agents are referenced to a
    keep-lane path from their current state.
    """
    predictions = dict(predictions or {})
    views = {agent.agent_id: agent for agent in snapshot.agents}
    if ego_id not in views:
        raise ValueError(f"ego agent {ego_id} not in snapshot")
    shared = tuple(dict.fromkeys(shared_ids))
    for aid in shared:
        if aid == ego_id or aid not in views:
            raise ValueError(f"invalid shared agent {aid}")

    solved_ids = (ego_id, *sorted(shared))
    T = config.horizon
    fixed_plans: dict[int, FixedPlan] = {}
    shared_init: dict[int, np.ndarray] = {}
    desired_map: dict[int, DesiredTrajectory] = {ego_id: desired}
    for aid, view in views.items():
        if aid == ego_id:
            continue
        desired_map[aid] = keep_lane_trajectory(view.state, snapshot.road)
        plan = predictions.get(aid)
        if plan is not None and (
            plan.controls.shape != (T, 2) or plan.states.shape != (T + 1, 5)
        ):
            raise ValueError(f"prediction for agent {aid} has the wrong horizon")
        if aid in solved_ids:
            shared_init[aid] = (
                plan.controls.copy() if plan is not None else np.zeros((T, 2))
            )
        else:
            if plan is None:
                raise ValueError(f"missing predicted rollout for agent {aid}")
            fixed_plans[aid] = plan

    return BestResponseProblem(
        ego_id=ego_id,
        solved_ids=solved_ids,
        views=views,
        shared_init=shared_init,
        fixed_plans=fixed_plans,
        desired=desired_map,
        coeffs=joint_coefficients(views, solved_ids),
        config=config,
        road=snapshot.road,
    )


def _weights_tuple(profile: AgentProfile) -> tuple[float, ...]:
    w = profile.weights
    return (w.k_v, w.k_u, w.k_speeding, w.k_lat, w.k_lon, w.k_ttc)


def build_engine(problem: BestResponseProblem) -> ObjectiveEngine:
    cfg = problem.config
    solved = []
    for aid in problem.solved_ids:
        view = problem.views[aid]
        geom = view.profile.geometry
        solved.append(
            SolvedAgentData(
                agent_id=aid,
                x0=np.asarray(view.state.as_tuple()),
                wheelbase=geom.wheelbase,
                delta_max=view.profile.limits.delta_max,
                offsets=geom.circle_offsets,
                radius=geom.circle_radius,
                v_max=view.profile.v_max,
                weights=_weights_tuple(view.profile),
                coeff=problem.coeffs[aid],
                desired=problem.desired[aid],
            )
        )
    fixed = []
    for aid in sorted(problem.fixed_plans):
        view = problem.views[aid]
        geom = view.profile.geometry
        plan = problem.fixed_plans[aid]
        fixed.append(
            FixedAgentData(
                agent_id=aid,
                states=plan.states,
                controls=plan.controls,
                offsets=geom.circle_offsets,
                radius=geom.circle_radius,
                v_max=view.profile.v_max,
                weights=_weights_tuple(view.profile),
                coeff=problem.coeffs[aid],
                desired=problem.desired[aid],
            )
        )
    return ObjectiveEngine(
        solved=solved,
        fixed=fixed,
        horizon=cfg.horizon,
        dt=cfg.dt,
        v_eps=cfg.ttc.v_eps,
        use_literal_inflation=cfg.ttc.use_literal_inflation,
        cosine_toward_ado=cfg.ttc.cosine_toward_ado,
        margin=cfg.margin,
        gap_floor=cfg.gap_floor,
    )


class SolveBudget:
    """Shared computation budget for one replanning pass.

    Deterministic runs count optimizer iterations so results do not depend
    on machine speed; otherwise a wall-clock deadline is checked between
    optimizer chunks and the in-flight chunk is allowed to finish.
    """

    def __init__(
        self, iterations: int | None = None, deadline: float | None = None
    ) -> None:
        if (iterations is None) == (deadline is None):
            raise ValueError("specify exactly one of iterations and deadline")
        self.iterations_left = iterations
        self.deadline = deadline

    @classmethod
    def from_config(cls, config: SolverConfig) -> "SolveBudget":
        if config.deterministic:
            return cls(iterations=config.total_iterations)
        return cls(deadline=time.perf_counter() + config.time_limit)

    @property
    def exhausted(self) -> bool:
        if self.iterations_left is not None:
            return self.iterations_left <= 0
        return time.perf_counter() >= self.deadline

    def grant(self, requested: int) -> int:
        if self.iterations_left is not None:
            granted = min(requested, self.iterations_left)
            self.iterations_left -= granted
            return granted
        return 0 if time.perf_counter() >= self.deadline else requested


def _control_bounds(problem: BestResponseProblem) -> tuple[np.ndarray, np.ndarray]:
    T = problem.config.horizon
    lo = np.empty((len(problem.solved_ids), T, 2))
    hi = np.empty_like(lo)
    for k, aid in enumerate(problem.solved_ids):
        limits = problem.views[aid].profile.limits
        lo[k, :, 0], hi[k, :, 0] = -limits.delta_u_max, limits.delta_u_max
        lo[k, :, 1], hi[k, :, 1] = -limits.v_u_max, limits.v_u_max
    return lo, hi


def _optimize(
    engine: ObjectiveEngine,
    z0: np.ndarray,
    bounds: list[tuple[float, float]],
    config: SolverConfig,
    budget: SolveBudget,
) -> tuple[np.ndarray, bool]:
    """Penalty-stage minimization. Returns the final point and whether every
    stage got its planned iterations."""
    z = z0
    ran_all = True
    for mu, planned in zip(config.stage_mu, config.stage_iterations):
        if config.use_gradients:
            fun = lambda zz: engine.cost_and_grad(zz, mu)  # noqa: E731
            jac = True
        else:
            fun = lambda zz: engine.cost(zz, mu)  # noqa: E731
            jac = None
        remaining = planned
        while remaining > 0:
            chunk = (
                remaining
                if budget.iterations_left is not None
                else min(remaining, config.wall_chunk)
            )
            granted = budget.grant(chunk)
            if granted == 0:
                ran_all = False
                break
            result = minimize(
                fun,
                z,
                jac=jac,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": granted, "maxcor": 8, "ftol": 1e-14, "gtol": 1e-10},
            )
            z = result.x
            remaining -= granted
            if result.status == 0:  # stage converged before using its budget
                break
        if not ran_all:
            break
    return z, ran_all


def rollout_defect(
    states: np.ndarray,
    controls: np.ndarray,
    geom: VehicleGeometry,
    limits: ControlLimits,
    dt: float,
) -> float:
    """Squared deviation of a stored rollout from the exact dynamics."""
    total = 0.0
    for t in range(controls.shape[0]):
        x, y, phi, delta, v = states[t]
        nx = x + dt * v * math.cos(phi)
        ny = y + dt * v * math.sin(phi)
        nphi = normalize_angle(phi + dt * (v / geom.wheelbase) * math.tan(delta))
        ndelta = min(max(delta + dt * controls[t, 0], -limits.delta_max), limits.delta_max)
        nv = max(v + dt * controls[t, 1], 0.0)
        diff = states[t + 1] - (nx, ny, nphi, ndelta, nv)
        total += float(diff @ diff)
    return total


def bound_defect(controls: np.ndarray, limits: ControlLimits) -> float:
    over_d = np.maximum(np.abs(controls[:, 0]) - limits.delta_u_max, 0.0)
    over_v = np.maximum(np.abs(controls[:, 1]) - limits.v_u_max, 0.0)
    return float(np.sum(over_d**2) + np.sum(over_v**2))


def separation_defect(
    solved_ids: Sequence[int],
    states: Mapping[int, np.ndarray],
    geoms: Mapping[int, VehicleGeometry],
    margin: float,
) -> float:
    """Squared keep-out ellipse violations of each solved agent against
    every other agent present, summed over the horizon."""
    total = 0.0
    for aid in solved_ids:
        ego_states = states[aid]
        for bid, other_states in states.items():
            if bid == aid:
                continue
            for t in range(ego_states.shape[0]):
                g = ellipse_separation(
                    VehicleState(*ego_states[t]),
                    VehicleState(*other_states[t]),
                    geoms[aid],
                    geoms[bid],
                    margin,
                )
                if g < 0.0:
                    total += g * g
    return total


def constraint_violation(
    problem: BestResponseProblem,
    controls: Mapping[int, np.ndarray],
    states: Mapping[int, np.ndarray],
) -> float:
    """Total squared constraint violation of a candidate: initial-state and
    dynamics defects and control-bound defects of the solved agents plus
    their keep-out ellipse violations against all agents in the problem."""
    cfg = problem.config
    total = 0.0
    all_states = dict(states)
    geoms = {}
    for aid, view in problem.views.items():
        geoms[aid] = view.profile.geometry
        if aid not in all_states:
            all_states[aid] = problem.fixed_plans[aid].states
    for aid in problem.solved_ids:
        view = problem.views[aid]
        start_diff = states[aid][0] - np.asarray(view.state.as_tuple())
        total += float(start_diff @ start_diff)
        total += rollout_defect(
            states[aid], controls[aid], view.profile.geometry, view.profile.limits, cfg.dt
        )
        total += bound_defect(controls[aid], view.profile.limits)
    total += separation_defect(problem.solved_ids, all_states, geoms, cfg.margin)
    return total


def solve_time_limited(
    problem: BestResponseProblem,
    warm_starts: Sequence[WarmStart],
    budget: SolveBudget | None = None,
) -> list[SolveCandidate]:
    """Run the penalty solver from each warm start under a shared budget.

    Every warm start yields a candidate: optimized while budget remains,
    otherwise evaluated as-is with converged=False so selection always has
    the full slate to choose from.
    """
    if not warm_starts:
        raise ValueError("at least one warm start is required")
    cfg = problem.config
    if budget is None:
        budget = SolveBudget.from_config(cfg)
    engine = build_engine(problem)
    lo, hi = _control_bounds(problem)
    bounds = list(zip(lo.ravel(), hi.ravel()))
    n_s, T = len(problem.solved_ids), cfg.horizon
    shared_U = [problem.shared_init[aid] for aid in problem.solved_ids[1:]]

    candidates = []
    for index, ws in enumerate(warm_starts):
        t0 = time.perf_counter()
        U0 = np.clip(np.stack([ws.controls, *shared_U]), lo, hi)
        optimized = not budget.exhausted
        if optimized:
            z, ran_all = _optimize(engine, U0.ravel(), bounds, cfg, budget)
            U = z.reshape(n_s, T, 2)
            X = engine.rollout(U)[0]
            converged = ran_all
        else:
            U = U0
            X = engine.rollout(U)[0]
            X = X.copy()
            X[0] = ws.states  # state-seeded guesses keep their stored rollout
            converged = False
        controls = {aid: U[k].copy() for k, aid in enumerate(problem.solved_ids)}
        states = {aid: X[k].copy() for k, aid in enumerate(problem.solved_ids)}
        candidates.append(
            SolveCandidate(
                index=index,
                label=ws.label or ws.provenance,
                maneuver=problem.desired[problem.ego_id].label,
                provenance=ws.provenance,
                controls=controls,
                states=states,
                objective=engine.objective_full(U, X),
                violation=constraint_violation(problem, controls, states),
                optimized=optimized,
                converged=converged,
                wall_time=time.perf_counter() - t0,
            )
        )
    return candidates


def select_solution(
    candidates: Sequence[SolveCandidate], config: SolverConfig
) -> SolveCandidate:
    """Pick the best feasible candidate by objective; with no feasible
    candidate, minimize the violation-discounted score. Ties break toward
    lower violation, then lower index, so selection is order-independent."""
    if not candidates:
        raise ValueError("no candidates to select from")

    def usable(c: SolveCandidate) -> bool:
        return math.isfinite(c.objective) and math.isfinite(c.violation)

    feasible = [c for c in candidates if usable(c) and c.violation <= config.eps_feasible]
    if feasible:
        return min(feasible, key=lambda c: (-c.objective, c.violation, c.index))
    return min(
        candidates,
        key=lambda c: (
            not usable(c),
            (-c.objective + config.k_slack * c.violation) if usable(c) else math.inf,
            c.violation if usable(c) else math.inf,
            c.index,
        ),
    )

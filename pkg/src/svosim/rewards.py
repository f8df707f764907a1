"""Per-agent performance reward and its socially weighted combination.

The performance reward scores a rollout against a reference path: it pays
for speed, charges for control effort, for exceeding the agent's desired
speed, for lateral and longitudinal deviation from the reference at matched
arc progress, and for approaching other vehicles (inverse-square TTC cost).
The social utility mixes the ego reward with each other agent's reward
through the agent's social orientation angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .dynamics import DEFAULT_LIMITS, ControlLimits, VehicleGeometry, VehicleState
from .safety import TtcParams, aggregate_ttc_cost
from .trajectories import DesiredTrajectory, eval_desired

REWARD_GAP_FLOOR = 1e-2  # m, keeps TTC finite on overlapping candidate rollouts


@dataclass(frozen=True)
class CostWeights:
    k_v: float = 0.05  # speed payoff
    k_u: float = 1.0  # control effort
    k_speeding: float = 5.0  # squared slack above the desired speed
    k_lat: float = 1.0  # lateral tracking error
    k_lon: float = 0.1  # longitudinal tracking error
    k_ttc: float = 10.0  # approach cost

    def __post_init__(self) -> None:
        values = (self.k_v, self.k_u, self.k_speeding, self.k_lat, self.k_lon, self.k_ttc)
        if any(w < 0.0 for w in values):
            raise ValueError("cost weights must be non-negative")


@dataclass(frozen=True)
class AgentProfile:
    """Planning-relevant description of one agent.

    svo_theta is the social orientation angle in [0, pi/2]: 0 weighs only
    the own reward, pi/4 weighs own and others' rewards equally. The
    optional svo_overrides map assigns a different angle toward specific
    agents; experiments leave it unset.
    """

    svo_theta: float
    v_max: float
    weights: CostWeights = CostWeights()
    geometry: VehicleGeometry = VehicleGeometry()
    limits: ControlLimits = DEFAULT_LIMITS
    svo_overrides: Mapping[int, float] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.svo_theta <= math.pi / 2.0:
            raise ValueError("svo_theta must lie in [0, pi/2]")
        if self.v_max <= 0.0:
            raise ValueError("v_max must be positive")
        if self.svo_overrides is not None:
            for theta in self.svo_overrides.values():
                if not 0.0 <= theta <= math.pi / 2.0:
                    raise ValueError("per-pair svo angles must lie in [0, pi/2]")

    def pair_theta(self, other_id: int) -> float:
        if self.svo_overrides is not None and other_id in self.svo_overrides:
            return self.svo_overrides[other_id]
        return self.svo_theta


def speeding_slack(v: float, v_max: float) -> float:
    """Speed above the desired maximum, zero when at or below it."""
    return max(v - v_max, 0.0)


def states_array(states: Sequence[VehicleState]) -> np.ndarray:
    """Stack VehicleState objects into an (N, 5) array (x, y, phi, delta, v)."""
    return np.asarray([s.as_tuple() for s in states])


def arc_progress(states: np.ndarray) -> np.ndarray:
    """Cumulative planar path length along a rollout, starting at zero."""
    steps = np.hypot(np.diff(states[:, 0]), np.diff(states[:, 1]))
    return np.concatenate(([0.0], np.cumsum(steps)))


def tracking_errors(
    states: np.ndarray, desired: DesiredTrajectory
) -> tuple[np.ndarray, np.ndarray]:
    """Lateral and longitudinal deviation from the reference pose matched at
    the rollout's own arc progress, expressed in the reference frame."""
    s = arc_progress(states)
    x_d, y_d, phi_d = eval_desired(desired, s)
    dx = states[:, 0] - x_d
    dy = states[:, 1] - y_d
    e_lat = -np.sin(phi_d) * dx + np.cos(phi_d) * dy
    e_lon = np.cos(phi_d) * dx + np.sin(phi_d) * dy
    return e_lat, e_lon


def performance_reward(
    states: np.ndarray,
    controls: np.ndarray,
    desired: DesiredTrajectory,
    ados: Sequence[tuple[np.ndarray, VehicleGeometry]],
    weights: CostWeights,
    profile: AgentProfile,
    ttc_params: TtcParams = TtcParams(),
    gap_floor: float | None = REWARD_GAP_FLOOR,
) -> float:
    """Reward of one rollout: sum over the T+1 states of the speed payoff
    minus speeding, tracking and approach costs, minus the effort of the T
    controls. The approach cost is computed with unit TTC weight and scaled
    once by weights.k_ttc here.
    """
    if controls.shape[0] != states.shape[0] - 1:
        raise ValueError("controls must be one shorter than states")
    for ado_states, _ in ados:
        if ado_states.shape[0] != states.shape[0]:
            raise ValueError("all rollouts must share the horizon length")

    v = states[:, 4]
    slack = np.maximum(v - profile.v_max, 0.0)
    e_lat, e_lon = tracking_errors(states, desired)

    total = float(
        np.sum(
            weights.k_v * v**2
            - weights.k_speeding * slack**2
            - weights.k_lat * e_lat**2
            - weights.k_lon * e_lon**2
        )
    )
    total -= weights.k_u * float(np.sum(controls**2))

    if ados and weights.k_ttc > 0.0:
        unit = replace(ttc_params, k_ttc=1.0)
        approach = 0.0
        for t in range(states.shape[0]):
            ego = VehicleState(*states[t])
            for ado_states, ado_geom in ados:
                approach += aggregate_ttc_cost(
                    ego,
                    VehicleState(*ado_states[t]),
                    profile.geometry,
                    ado_geom,
                    unit,
                    gap_floor=gap_floor,
                )
        total -= weights.k_ttc * approach
    return total


def social_utility(
    ego_reward: float, ado_rewards: Sequence[float], theta: float
) -> float:
    """Sum over other agents of cos(theta) * own reward + sin(theta) * their
    reward; with no other agents, cos(theta) * own reward."""
    if not 0.0 <= theta <= math.pi / 2.0:
        raise ValueError("theta must lie in [0, pi/2]")
    if len(ado_rewards) == 0:
        return math.cos(theta) * ego_reward
    c, s = math.cos(theta), math.sin(theta)
    return sum(c * ego_reward + s * r for r in ado_rewards)

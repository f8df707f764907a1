from __future__ import annotations

import math

import numpy as np
import pytest

from svosim.dynamics import VehicleGeometry, VehicleState
from svosim.rewards import (
    AgentProfile,
    CostWeights,
    arc_progress,
    performance_reward,
    social_utility,
    speeding_slack,
    tracking_errors,
)
from svosim.road import RoadSpec
from svosim.trajectories import keep_lane_trajectory

ROAD = RoadSpec()
GEOM = VehicleGeometry()
T = 10
DT = 0.2


def cruise_rollout(v=12.0, y=0.0, n_steps=T):
    """States exactly on a lane center at constant speed."""
    states = np.zeros((n_steps + 1, 5))
    states[:, 0] = v * DT * np.arange(n_steps + 1)
    states[:, 1] = y
    states[:, 4] = v
    return states


def test_speeding_slack_is_one_sided():
    assert speeding_slack(13.0, 12.0) == pytest.approx(1.0)
    assert speeding_slack(11.0, 12.0) == 0.0


def test_arc_progress_accumulates_path_length():
    states = cruise_rollout(v=10.0)
    np.testing.assert_allclose(arc_progress(states), 2.0 * np.arange(T + 1), atol=1e-12)


def test_tracking_errors_zero_on_reference():
    states = cruise_rollout()
    traj = keep_lane_trajectory(VehicleState(0.0, 0.0, 0.0, 0.0, 12.0), ROAD)
    e_lat, e_lon = tracking_errors(states, traj)
    np.testing.assert_allclose(e_lat, 0.0, atol=1e-9)
    np.testing.assert_allclose(e_lon, 0.0, atol=1e-9)


def test_tracking_errors_pick_up_lateral_offset():
    states = cruise_rollout(y=0.4)
    traj = keep_lane_trajectory(VehicleState(0.0, 0.0, 0.0, 0.0, 12.0), ROAD)
    e_lat, e_lon = tracking_errors(states, traj)
    np.testing.assert_allclose(e_lat, 0.4, atol=1e-9)
    np.testing.assert_allclose(e_lon, 0.0, atol=1e-9)


def test_perfect_cruise_reward_is_speed_payoff_only():
    states = cruise_rollout(v=12.0)
    controls = np.zeros((T, 2))
    traj = keep_lane_trajectory(VehicleState(0.0, 0.0, 0.0, 0.0, 12.0), ROAD)
    weights = CostWeights(k_v=0.1)
    profile = AgentProfile(svo_theta=0.0, v_max=12.0, weights=weights)
    reward = performance_reward(states, controls, traj, [], weights, profile)
    assert reward == pytest.approx(0.1 * 144.0 * (T + 1), rel=1e-12)


def test_speeding_penalized_quadratically_once():
    controls = np.zeros((T, 2))
    traj = keep_lane_trajectory(VehicleState(0.0, 0.0, 0.0, 0.0, 13.0), ROAD)
    weights = CostWeights(k_v=0.0, k_speeding=5.0)
    profile = AgentProfile(svo_theta=0.0, v_max=12.0, weights=weights)
    reward = performance_reward(cruise_rollout(v=13.0), controls, traj, [], weights, profile)
    assert reward == pytest.approx(-5.0 * 1.0 * (T + 1), rel=1e-12)


def test_control_effort_counts_t_terms():
    states = cruise_rollout()
    controls = np.full((T, 2), 0.3)
    traj = keep_lane_trajectory(VehicleState(0.0, 0.0, 0.0, 0.0, 12.0), ROAD)
    weights = CostWeights(k_v=0.0, k_u=2.0, k_speeding=0.0)
    profile = AgentProfile(svo_theta=0.0, v_max=12.0, weights=weights)
    reward = performance_reward(states, controls, traj, [], weights, profile)
    assert reward == pytest.approx(-2.0 * (0.09 + 0.09) * T, rel=1e-12)


def test_reward_with_k_v_only_orders_by_speed_energy():
    traj = keep_lane_trajectory(VehicleState(0.0, 0.0, 0.0, 0.0, 12.0), ROAD)
    weights = CostWeights(k_v=0.05, k_u=0.0, k_speeding=0.0, k_lat=0.0, k_lon=0.0, k_ttc=0.0)
    profile = AgentProfile(svo_theta=0.0, v_max=20.0, weights=weights)
    controls = np.zeros((T, 2))
    rng = np.random.default_rng(5)
    rollouts = [cruise_rollout(v=rng.uniform(5.0, 15.0)) for _ in range(8)]
    rewards = [
        performance_reward(s, controls, traj, [], weights, profile) for s in rollouts
    ]
    energies = [float(np.sum(s[:, 4] ** 2)) for s in rollouts]
    assert np.argsort(rewards).tolist() == np.argsort(energies).tolist()


def test_reward_decreases_as_ado_closes_faster():
    traj = keep_lane_trajectory(VehicleState(0.0, 0.0, 0.0, 0.0, 12.0), ROAD)
    weights = CostWeights()
    profile = AgentProfile(svo_theta=0.0, v_max=12.0, weights=weights)
    controls = np.zeros((T, 2))
    ego = cruise_rollout(v=12.0)
    rewards = []
    for ado_speed in (14.0, 12.0, 10.0, 8.0, 6.0):
        ado = cruise_rollout(v=ado_speed)
        ado[:, 0] += 25.0  # leader 25 m ahead
        rewards.append(
            performance_reward(ego, controls, traj, [(ado, GEOM)], weights, profile)
        )
    assert all(a >= b - 1e-12 for a, b in zip(rewards, rewards[1:]))


def test_mismatched_rollout_lengths_rejected():
    traj = keep_lane_trajectory(VehicleState(0.0, 0.0, 0.0, 0.0, 12.0), ROAD)
    weights = CostWeights()
    profile = AgentProfile(svo_theta=0.0, v_max=12.0)
    with pytest.raises(ValueError, match="shorter"):
        performance_reward(cruise_rollout(), np.zeros((T + 3, 2)), traj, [], weights, profile)
    ado = cruise_rollout(n_steps=T - 1)
    with pytest.raises(ValueError, match="horizon"):
        performance_reward(
            cruise_rollout(), np.zeros((T, 2)), traj, [(ado, GEOM)], weights, profile
        )


def test_social_utility_egoistic_counts_own_reward_per_ado():
    assert social_utility(5.0, [1.0, 2.0, 3.0], theta=0.0) == pytest.approx(15.0)


def test_social_utility_prosocial_splits_evenly():
    value = social_utility(4.0, [10.0], theta=math.pi / 4.0)
    assert value == pytest.approx(math.sqrt(2.0) / 2.0 * 14.0, rel=1e-12)
    assert value == pytest.approx(9.899494936611665, rel=1e-12)


def test_social_utility_fallback_without_ados():
    assert social_utility(8.0, [], theta=0.3) == pytest.approx(8.0 * math.cos(0.3))


def test_social_utility_rejects_theta_out_of_range():
    with pytest.raises(ValueError):
        social_utility(1.0, [2.0], theta=-0.1)
    with pytest.raises(ValueError):
        social_utility(1.0, [2.0], theta=math.pi)


def test_profile_validation_and_pair_override():
    with pytest.raises(ValueError):
        AgentProfile(svo_theta=2.0, v_max=12.0)
    with pytest.raises(ValueError):
        AgentProfile(svo_theta=0.2, v_max=-1.0)
    profile = AgentProfile(svo_theta=0.2, v_max=12.0, svo_overrides={3: 0.7})
    assert profile.pair_theta(3) == pytest.approx(0.7)
    assert profile.pair_theta(4) == pytest.approx(0.2)


def test_weights_must_be_non_negative():
    with pytest.raises(ValueError):
        CostWeights(k_lat=-0.5)

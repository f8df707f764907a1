"""Piecewise-cubic reference paths and the warm-start bank.

A reference is three cubic segments in arc progress s, each expressed in
segment-local coordinates, evaluated one at a time over consecutive
sub-domains. Beyond the last segment the path continues straight along its
final heading. Per maneuver the lateral profile is a cubic with zero slope at
both ends; the heading polynomial is least-squares fitted to atan2(y', x').
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    DEFAULT_LIMITS,
    ControlLimits,
    VehicleGeometry,
    VehicleState,
    clamp,
    normalize_angle,
)
from .road import RoadSpec, lane_center, nearest_lane

KEEP_LANE = "keep-lane"
CHANGE_LEFT = "change-left"
CHANGE_RIGHT = "change-right"
FINISH_MID_CHANGE = "finish-mid-change"

LANE_CHANGE_TIME = 1.25  # s, half-maneuver time scale
MID_CHANGE_THRESHOLD = 0.5  # m off any lane center counts as mid-change
MIN_SEGMENT_LENGTH = 8.0  # m
PHI_FIT_SAMPLES = 33


@dataclass(frozen=True)
class PolySegment:
    """One segment; coefficients are ascending (c0, c1, c2, c3) in local s."""

    coeffs_x: tuple[float, float, float, float]
    coeffs_y: tuple[float, float, float, float]
    coeffs_phi: tuple[float, float, float, float]
    length: float


@dataclass(frozen=True)
class DesiredTrajectory:
    segments: tuple[PolySegment, PolySegment, PolySegment]
    label: str

    @property
    def breakpoints(self) -> tuple[float, float]:
        return (self.segments[0].length, self.segments[0].length + self.segments[1].length)

    @property
    def domain(self) -> float:
        return sum(seg.length for seg in self.segments)


def fit_lane_change_cubic(
    lateral_offset: float, segment_length: float
) -> tuple[float, float, float, float]:
    """Cubic y(s) with y(0) = 0, y'(0) = 0, y(s1) = w, y'(s1) = 0."""
    if segment_length <= 0.0:
        raise ValueError("segment length must be positive")
    s1 = segment_length
    return (0.0, 0.0, 3.0 * lateral_offset / s1**2, -2.0 * lateral_offset / s1**3)


def _poly_eval(coeffs: tuple[float, ...], s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    for c in reversed(coeffs):
        out = out * s + c
    return out


def _poly_slope(coeffs: tuple[float, ...], s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    for i in range(len(coeffs) - 1, 0, -1):
        out = out * s + i * coeffs[i]
    return out


def _fit_phi(
    coeffs_x: tuple[float, ...], coeffs_y: tuple[float, ...], length: float
) -> tuple[float, float, float, float]:
    """Cubic over the segment matching atan2(y', x').

    The endpoints interpolate exactly so consecutive segments stay continuous;
    the interior is least-squares fitted with two bump basis functions that
    vanish at both ends.
    """
    s = np.linspace(0.0, length, PHI_FIT_SAMPLES)
    phi = np.arctan2(_poly_slope(coeffs_y, s), _poly_slope(coeffs_x, s))
    if np.allclose(phi, phi[0]):
        return (float(phi[0]), 0.0, 0.0, 0.0)
    phi0, phi1 = float(phi[0]), float(phi[-1])
    residual = phi - (phi0 + (phi1 - phi0) * s / length)
    basis = np.stack([s * (length - s), s**2 * (length - s)], axis=1)
    (a, b), *_ = np.linalg.lstsq(basis, residual, rcond=None)
    return (
        phi0,
        (phi1 - phi0) / length + a * length,
        float(b * length - a),
        float(-b),
    )


def _straight_segment(x0: float, y0: float, heading: float, length: float) -> PolySegment:
    return PolySegment(
        coeffs_x=(x0, math.cos(heading), 0.0, 0.0),
        coeffs_y=(y0, math.sin(heading), 0.0, 0.0),
        coeffs_phi=(heading, 0.0, 0.0, 0.0),
        length=length,
    )


def _lateral_maneuver(
    x0: float, y0: float, offset: float, s1: float, label: str
) -> DesiredTrajectory:
    """Cubic blend from y0 to y0 + offset over s1, then straight."""
    cy = fit_lane_change_cubic(offset, s1)
    cy = (y0, cy[1], cy[2], cy[3])
    cx = (x0, 1.0, 0.0, 0.0)
    first = PolySegment(cx, cy, _fit_phi(cx, cy, s1), s1)
    tail = max(s1 / 2.0, MIN_SEGMENT_LENGTH)
    second = _straight_segment(x0 + s1, y0 + offset, 0.0, tail)
    third = _straight_segment(x0 + s1 + tail, y0 + offset, 0.0, tail)
    return DesiredTrajectory((first, second, third), label)


def _segment_state(
    seg: PolySegment, s_local: np.ndarray
) -> tuple[np.ndarray, ...]:
    return (
        _poly_eval(seg.coeffs_x, s_local),
        _poly_eval(seg.coeffs_y, s_local),
        _poly_eval(seg.coeffs_phi, s_local),
        _poly_slope(seg.coeffs_x, s_local),
        _poly_slope(seg.coeffs_y, s_local),
        _poly_slope(seg.coeffs_phi, s_local),
    )


def eval_desired_full(
    traj: DesiredTrajectory, s: float | np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Reference pose and per-arc slopes at progress s (vectorized).

    Returns (x, y, phi, dx/ds, dy/ds, dphi/ds). Progress below zero clamps
    to the path start; beyond the last segment the path extends straight at
    the final heading.
    """
    s_arr = np.clip(np.asarray(s, dtype=float), 0.0, None)
    x = np.empty_like(s_arr)
    y = np.empty_like(s_arr)
    phi = np.empty_like(s_arr)
    dx = np.empty_like(s_arr)
    dy = np.empty_like(s_arr)
    dphi = np.empty_like(s_arr)

    start = 0.0
    covered = np.zeros(s_arr.shape, dtype=bool)
    for seg in traj.segments:
        end = start + seg.length
        mask = ~covered & (s_arr <= end)
        if mask.any():
            vals = _segment_state(seg, s_arr[mask] - start)
            x[mask], y[mask], phi[mask], dx[mask], dy[mask], dphi[mask] = vals
            covered |= mask
        start = end

    beyond = ~covered
    if beyond.any():
        last = traj.segments[-1]
        end_vals = _segment_state(last, np.asarray([last.length]))
        x_end, y_end, phi_end = (float(v[0]) for v in end_vals[:3])
        extra = s_arr[beyond] - start
        x[beyond] = x_end + extra * math.cos(phi_end)
        y[beyond] = y_end + extra * math.sin(phi_end)
        phi[beyond] = phi_end
        dx[beyond] = math.cos(phi_end)
        dy[beyond] = math.sin(phi_end)
        dphi[beyond] = 0.0
    return x, y, phi, dx, dy, dphi


def eval_desired(
    traj: DesiredTrajectory, s: float | np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reference (x, y, phi) at arc progress s."""
    x, y, phi, _, _, _ = eval_desired_full(traj, s)
    return x, y, phi


def keep_lane_trajectory(
    state: VehicleState, road: RoadSpec, t_lane: float = LANE_CHANGE_TIME
) -> DesiredTrajectory:
    """Straight reference along the center of the nearest lane."""
    center = lane_center(road, nearest_lane(road, state.y))
    span = max(4.0 * state.v * t_lane, 3.0 * MIN_SEGMENT_LENGTH)
    third = span / 3.0
    segments = tuple(
        _straight_segment(state.x + k * third, center, 0.0, third) for k in range(3)
    )
    return DesiredTrajectory(segments, KEEP_LANE)  # type: ignore[arg-type]


def generate_bank(
    state: VehicleState,
    road: RoadSpec,
    t_lane: float = LANE_CHANGE_TIME,
    mid_change_threshold: float = MID_CHANGE_THRESHOLD,
) -> list[DesiredTrajectory]:
    """Candidate references from the current state: stay in the nearest
    lane, change to an existing adjacent lane, and, when more than
    mid_change_threshold off every center, settle back onto the nearest one.
    """
    half = road.lane_width / 2.0
    if not (0.0 <= state.x <= road.length) or not (
        -half <= state.y <= (road.lane_count - 1) * road.lane_width + half
    ):
        raise ValueError("state is outside the road bounds")

    lane = nearest_lane(road, state.y)
    center = lane_center(road, lane)
    s1 = max(4.0 * state.v * t_lane, 2.0 * MIN_SEGMENT_LENGTH)

    bank = [keep_lane_trajectory(state, road, t_lane)]
    if lane + 1 < road.lane_count:
        offset = lane_center(road, lane + 1) - state.y
        bank.append(_lateral_maneuver(state.x, state.y, offset, s1, CHANGE_LEFT))
    if lane - 1 >= 0:
        offset = lane_center(road, lane - 1) - state.y
        bank.append(_lateral_maneuver(state.x, state.y, offset, s1, CHANGE_RIGHT))
    residual = center - state.y
    if abs(residual) > mid_change_threshold:
        s_settle = max(s1 * abs(residual) / road.lane_width, MIN_SEGMENT_LENGTH)
        bank.append(
            _lateral_maneuver(state.x, state.y, residual, s_settle, FINISH_MID_CHANGE)
        )
    return bank


STATE_SEEDED = "state-seeded"
CONTROL_SEEDED = "control-seeded"


@dataclass
class WarmStart:
    """Initial guess for one best-response solve.

    controls has shape (T, 2) as (delta_u, v_u); states has shape (T+1, 5)
    as (x, y, phi, delta, v). State-seeded starts sample a reference path and
    back the controls out by finite differences, so re-rolling their controls
    need not reproduce the stored states. Control-seeded starts store the
    exact rollout of a constant control.
    """

    controls: np.ndarray
    states: np.ndarray
    provenance: str
    label: str | None = None


def _rollout_array(
    state: VehicleState,
    controls: np.ndarray,
    dt: float,
    geom: VehicleGeometry,
    limits: ControlLimits,
) -> np.ndarray:
    states = np.empty((len(controls) + 1, 5))
    states[0] = state.as_tuple()
    for t, (du, au) in enumerate(controls):
        x, y, phi, delta, v = states[t]
        states[t + 1] = (
            x + dt * v * math.cos(phi),
            y + dt * v * math.sin(phi),
            normalize_angle(phi + dt * (v / geom.wheelbase) * math.tan(delta)),
            clamp(delta + dt * du, -limits.delta_max, limits.delta_max),
            max(v + dt * au, 0.0),
        )
    return states


def _state_seeded(
    state: VehicleState,
    traj: DesiredTrajectory,
    horizon: int,
    dt: float,
    geom: VehicleGeometry,
    limits: ControlLimits,
) -> WarmStart:
    progress = state.v * dt * np.arange(horizon + 2)
    x, y, phi, _, _, _ = eval_desired_full(traj, progress)
    states = np.empty((horizon + 1, 5))
    states[:, 0] = x[: horizon + 1]
    states[:, 1] = y[: horizon + 1]
    states[:, 2] = phi[: horizon + 1]
    states[:, 4] = state.v

    if state.v > 0.1:
        phi_rate = np.diff(phi) / dt
        delta = np.arctan(np.clip(phi_rate * geom.wheelbase / state.v, -20.0, 20.0))
        delta = np.clip(delta, -limits.delta_max, limits.delta_max)
    else:
        delta = np.zeros(horizon + 1)
    states[:, 3] = delta[: horizon + 1]

    controls = np.zeros((horizon, 2))
    controls[:, 0] = np.clip(
        np.diff(delta[: horizon + 1]) / dt, -limits.delta_u_max, limits.delta_u_max
    )
    return WarmStart(controls, states, STATE_SEEDED, traj.label)


def generate_warm_starts(
    state: VehicleState,
    bank: list[DesiredTrajectory],
    ados: list[np.ndarray] | None,
    horizon: int,
    dt: float,
    geom: VehicleGeometry = VehicleGeometry(),
    limits: ControlLimits = DEFAULT_LIMITS,
) -> list[WarmStart]:
    """One state-seeded start per reference plus three constant-control
    starts (coast, half brake, half throttle). The ado rollouts are accepted
    for signature stability; the starts do not depend on them.
    """
    del ados
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    starts = [_state_seeded(state, traj, horizon, dt, geom, limits) for traj in bank]
    for name, accel in (
        ("coast", 0.0),
        ("brake", -limits.v_u_max / 2.0),
        ("accelerate", limits.v_u_max / 2.0),
    ):
        controls = np.zeros((horizon, 2))
        controls[:, 1] = accel
        states = _rollout_array(state, controls, dt, geom, limits)
        starts.append(WarmStart(controls, states, CONTROL_SEEDED, name))
    return starts

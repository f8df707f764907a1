"""Kinematic bicycle model with steering-rate and acceleration inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass


def normalize_angle(angle: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    return -((-angle + math.pi) % (2.0 * math.pi) - math.pi)


def clamp(value: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, value))


@dataclass(frozen=True)
class VehicleState:
    """Planar pose plus steering angle and forward speed."""

    x: float  # m
    y: float  # m
    phi: float  # heading, rad
    delta: float  # steering angle, rad
    v: float  # forward speed, m/s

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.x, self.y, self.phi, self.delta, self.v)


@dataclass(frozen=True)
class ControlInput:
    delta_u: float  # steering rate, rad/s
    v_u: float  # acceleration, m/s^2


@dataclass(frozen=True)
class ControlLimits:
    delta_max: float = 0.5  # steering angle bound, rad
    delta_u_max: float = 0.5  # steering rate bound, rad/s
    v_u_max: float = 3.0  # acceleration bound, m/s^2

    def __post_init__(self) -> None:
        if min(self.delta_max, self.delta_u_max, self.v_u_max) <= 0.0:
            raise ValueError("control limits must be positive")


@dataclass(frozen=True)
class VehicleGeometry:
    """Rectangular footprint covered by two congruent discs.

    The default disc layout places one disc center a quarter length ahead of
    the vehicle center and one behind, with radius chosen so the discs just
    cover the rectangle corners.
    """

    length: float = 4.5  # m
    width: float = 1.8  # m
    wheelbase: float = 2.9  # m
    circle_offsets: tuple[float, float] = (-1.125, 1.125)  # m, along heading
    circle_radius: float = math.hypot(4.5 / 4.0, 1.8 / 2.0)  # m

    def __post_init__(self) -> None:
        if min(self.length, self.width, self.wheelbase) <= 0.0:
            raise ValueError("vehicle dimensions must be positive")
        if self.circle_radius < self.width / 2.0:
            raise ValueError("disc radius must be at least half the width")
        half_w = self.width / 2.0
        for corner_x in (-self.length / 2.0, self.length / 2.0):
            reach = min(
                math.hypot(corner_x - off, half_w) for off in self.circle_offsets
            )
            if reach > self.circle_radius + 1e-9:
                raise ValueError("discs do not cover the footprint rectangle")

    @classmethod
    def from_dimensions(
        cls, length: float, width: float, wheelbase: float
    ) -> "VehicleGeometry":
        offsets = (-length / 4.0, length / 4.0)
        radius = math.hypot(length / 4.0, width / 2.0)
        return cls(length, width, wheelbase, offsets, radius)


DEFAULT_LIMITS = ControlLimits()


def _check_finite(state: VehicleState) -> None:
    for name, value in zip(("x", "y", "phi", "delta", "v"), state.as_tuple()):
        if not math.isfinite(value):
            raise ValueError(f"non-finite state component {name}={value!r}")


def step(
    state: VehicleState,
    u: ControlInput,
    dt: float,
    geom: VehicleGeometry,
    limits: ControlLimits = DEFAULT_LIMITS,
) -> VehicleState:
    """Advance one forward-Euler step.

        x'   = x + dt * v * cos(phi)
        y'   = y + dt * v * sin(phi)
        phi' = phi + dt * (v / wheelbase) * tan(delta)
        delta' = delta + dt * delta_u   (clamped to +-delta_max)
        v'   = v + dt * v_u             (clamped below at 0)

    All right-hand sides use the pre-step state. The returned heading is
    normalized to (-pi, pi].
    """
    _check_finite(state)
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if abs(u.delta_u) > limits.delta_u_max + 1e-12 or abs(u.v_u) > limits.v_u_max + 1e-12:
        raise ValueError("control input exceeds limits")
    x = state.x + dt * state.v * math.cos(state.phi)
    y = state.y + dt * state.v * math.sin(state.phi)
    phi = normalize_angle(state.phi + dt * (state.v / geom.wheelbase) * math.tan(state.delta))
    delta = clamp(state.delta + dt * u.delta_u, -limits.delta_max, limits.delta_max)
    v = max(state.v + dt * u.v_u, 0.0)
    return VehicleState(x, y, phi, delta, v)


def rollout(
    state: VehicleState,
    controls: list[ControlInput] | tuple[ControlInput, ...],
    dt: float,
    geom: VehicleGeometry,
    limits: ControlLimits = DEFAULT_LIMITS,
) -> list[VehicleState]:
    """Apply a control sequence, returning the T+1 visited states."""
    states = [state]
    for u in controls:
        states.append(step(states[-1], u, dt, geom, limits))
    return states

"""Disc-based collision geometry and a buffered time-to-collision cost.

Each vehicle footprint is covered by two discs (see VehicleGeometry). The
pairwise risk signal between two vehicles is a modified time-to-collision
computed per disc pair: the separation vector is inflated to account for the
disc radii, the other vehicle's speed is buffered up or down depending on
whether it sits ahead of or behind the ego, and the raw projected TTC is
divided by the alignment cosine between the ego heading and the direction
toward the other vehicle. Negative modified TTC means an approaching pair and
is penalized with an inverse-square cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .dynamics import VehicleGeometry, VehicleState

COSINE_EPS = 1e-6


class OverlapError(ValueError):
    """Raised when disc footprints already overlap and the inflated
    separation is undefined."""


@dataclass(frozen=True)
class TtcParams:
    v_eps: float = 1.0  # speed buffer applied to the other vehicle, m/s
    k_ttc: float = 1.0  # weight of the inverse-square cost
    # Inflate the separation by |p| / (|p| - r_i - r_j). The alternative
    # scales it by (|p| - r_i - r_j) / |p| instead, which shrinks the
    # separation as the gap closes and is the physically conservative choice.
    use_literal_inflation: bool = True
    # Measure the alignment cosine along ego-to-ado. With this flag off the
    # cosine is taken along the raw separation (ego minus ado), which flips
    # the sign for a leader straight ahead.
    cosine_toward_ado: bool = True

    def __post_init__(self) -> None:
        if self.v_eps < 0.0 or self.k_ttc < 0.0:
            raise ValueError("v_eps and k_ttc must be non-negative")


@dataclass(frozen=True)
class CirclePair:
    """Two disc centers of one vehicle, world frame, plus shared radius."""

    centers: tuple[tuple[float, float], tuple[float, float]]
    radius: float


def vehicle_circles(state: VehicleState, geom: VehicleGeometry) -> CirclePair:
    c, s = math.cos(state.phi), math.sin(state.phi)
    centers = tuple(
        (state.x + off * c, state.y + off * s) for off in geom.circle_offsets
    )
    return CirclePair(centers, geom.circle_radius)  # type: ignore[arg-type]


def velocity_vector(state: VehicleState) -> tuple[float, float]:
    return (state.v * math.cos(state.phi), state.v * math.sin(state.phi))


def raw_ttc(p_ij: tuple[float, float], v_ij: tuple[float, float]) -> float:
    """Projected time to closest approach, (p.p) / (p.v).

    Negative while the pair is approaching. Returns +inf when the relative
    velocity is orthogonal to the separation (no projected approach).
    """
    px, py = p_ij
    pp = px * px + py * py
    if pp == 0.0:
        raise ValueError("separation vector must be nonzero")
    pv = px * v_ij[0] + py * v_ij[1]
    if pv == 0.0:
        return math.inf
    return pp / pv


def modified_ttc(
    ego_center: tuple[float, float],
    ado_center: tuple[float, float],
    ego_velocity: tuple[float, float],
    ado_velocity: tuple[float, float],
    ego_heading: float,
    radii: tuple[float, float],
    params: TtcParams,
) -> float:
    """Buffered, inflated, alignment-scaled TTC for one disc pair.

    Steps: separation p = ego - ado; inflate p by the disc radii; indicate
    whether the ado is ahead of the ego along its heading; buffer the ado
    speed by v_eps (down when ahead, up when behind); project the raw TTC on
    the inflated separation; divide by the alignment cosine. A cosine within
    1e-6 of zero yields +inf (no cost downstream).
    """
    px = ego_center[0] - ado_center[0]
    py = ego_center[1] - ado_center[1]
    norm = math.hypot(px, py)
    gap = norm - radii[0] - radii[1]
    if gap <= 0.0:
        raise OverlapError(f"disc footprints overlap (gap {gap:.3f} m)")
    if params.use_literal_inflation:
        scale = norm / gap
    else:
        scale = gap / norm
    p_infl = (px * scale, py * scale)

    hx, hy = math.cos(ego_heading), math.sin(ego_heading)
    ahead = -(px * hx + py * hy)  # > 0 when the ado is in front of the ego
    front = 1.0 if ahead > 0.0 else 0.0

    ado_speed = math.hypot(*ado_velocity)
    if ado_speed > 0.0:
        buffered = (ado_speed + params.v_eps * (1.0 - 2.0 * front)) / ado_speed
        ado_velocity = (ado_velocity[0] * buffered, ado_velocity[1] * buffered)
    v_rel = (ego_velocity[0] - ado_velocity[0], ego_velocity[1] - ado_velocity[1])

    if params.cosine_toward_ado:
        cosine = ahead / norm
    else:
        cosine = (px * hx + py * hy) / norm
    if abs(cosine) < COSINE_EPS:
        return math.inf
    t_proj = raw_ttc(p_infl, v_rel)
    if math.isinf(t_proj):
        return math.inf
    return t_proj / cosine


def ttc_cost(t_tilde: float, params: TtcParams) -> float:
    """Inverse-square penalty for approaching pairs, zero otherwise."""
    if t_tilde < 0.0:
        return params.k_ttc / (t_tilde * t_tilde)
    return 0.0


def aggregate_ttc_cost(
    ego: VehicleState,
    ado: VehicleState,
    ego_geom: VehicleGeometry,
    ado_geom: VehicleGeometry,
    params: TtcParams,
    gap_floor: float | None = None,
) -> float:
    """Sum the disc-pair TTC costs between two vehicles (four pairs).

    With gap_floor set, disc gaps below the floor are clamped instead of
    raising OverlapError; planners use this to keep candidate evaluation
    finite on infeasible rollouts.
    """
    ego_circles = vehicle_circles(ego, ego_geom)
    ado_circles = vehicle_circles(ado, ado_geom)
    ego_vel = velocity_vector(ego)
    ado_vel = velocity_vector(ado)
    radii = (ego_circles.radius, ado_circles.radius)
    total = 0.0
    for ce in ego_circles.centers:
        for ca in ado_circles.centers:
            if gap_floor is not None:
                gap = math.hypot(ce[0] - ca[0], ce[1] - ca[1]) - radii[0] - radii[1]
                if gap <= gap_floor:
                    direction = math.atan2(ca[1] - ce[1], ca[0] - ce[0])
                    offset = radii[0] + radii[1] + gap_floor
                    ca = (
                        ce[0] + offset * math.cos(direction),
                        ce[1] + offset * math.sin(direction),
                    )
            t_tilde = modified_ttc(ce, ca, ego_vel, ado_vel, ego.phi, radii, params)
            total += ttc_cost(t_tilde, params)
    return total


def separation_axes(
    geom_a: VehicleGeometry, geom_b: VehicleGeometry, margin: float
) -> tuple[float, float]:
    """Semi-axes of the keep-out ellipse of vehicle a against discs of b."""
    reach = geom_a.circle_radius + geom_b.circle_radius + margin
    semi_major = max(abs(o) for o in geom_a.circle_offsets) + reach
    return semi_major, reach


def ellipse_separation(
    ego: VehicleState,
    ado: VehicleState,
    ego_geom: VehicleGeometry,
    ado_geom: VehicleGeometry,
    margin: float = 0.3,
) -> float:
    """Smooth separation margin, non-negative when the ado's disc centers
    lie outside the heading-aligned keep-out ellipse of the ego.

    The ellipse is centered on the ego, stretched along its heading, and
    inflated by both disc radii plus the margin, so a non-negative value
    keeps the disc footprints from touching. Returns the minimum over the
    ado's two disc centers of (xi/a)^2 + (eta/b)^2 - 1 in the ego frame.
    """
    a, b = separation_axes(ego_geom, ado_geom, margin)
    cos_h, sin_h = math.cos(ego.phi), math.sin(ego.phi)
    worst = math.inf
    for cx, cy in vehicle_circles(ado, ado_geom).centers:
        rel_x = cx - ego.x
        rel_y = cy - ego.y
        xi = cos_h * rel_x + sin_h * rel_y
        eta = -sin_h * rel_x + cos_h * rel_y
        worst = min(worst, (xi / a) ** 2 + (eta / b) ** 2 - 1.0)
    return worst


def collision_check(
    ego: VehicleState,
    ado: VehicleState,
    ego_geom: VehicleGeometry,
    ado_geom: VehicleGeometry,
) -> bool:
    """True when any disc pair of the two footprints strictly overlaps."""
    ego_circles = vehicle_circles(ego, ego_geom)
    ado_circles = vehicle_circles(ado, ado_geom)
    threshold = ego_circles.radius + ado_circles.radius
    for ce in ego_circles.centers:
        for ca in ado_circles.centers:
            if math.hypot(ce[0] - ca[0], ce[1] - ca[1]) < threshold:
                return True
    return False

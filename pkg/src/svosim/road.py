"""Straight multi-lane road description and lane center helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RoadSpec:
    """Straight road along +x; lane k is centered at y = k * lane_width."""

    lane_count: int = 3
    lane_width: float = 3.7  # m
    length: float = 2000.0  # m

    def __post_init__(self) -> None:
        if self.lane_count < 1:
            raise ValueError("need at least one lane")
        if self.lane_width <= 0.0 or self.length <= 0.0:
            raise ValueError("lane width and length must be positive")


def lane_center(road: RoadSpec, index: int) -> float:
    if not 0 <= index < road.lane_count:
        raise ValueError(f"lane index {index} out of range")
    return index * road.lane_width


def lane_centers(road: RoadSpec) -> np.ndarray:
    return np.arange(road.lane_count) * road.lane_width


def nearest_lane(road: RoadSpec, y: float) -> int:
    index = int(round(y / road.lane_width))
    return min(max(index, 0), road.lane_count - 1)


def in_bounds(road: RoadSpec, x: float, y: float) -> bool:
    half = road.lane_width / 2.0
    return 0.0 <= x <= road.length and -half <= y <= (road.lane_count - 1) * road.lane_width + half

"""Planar pose type and angle helpers shared by the map, lattice and controller."""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    a = (a + math.pi) % TWO_PI
    return a - math.pi


@dataclass(frozen=True)
class Pose2D:
    """Planar robot pose; heading is always stored normalized to [-pi, pi)."""

    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

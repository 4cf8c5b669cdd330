"""Scripted evader opponent: artificial-potential-field flight.

Evaders feel inverse-square repulsion from active pursuers and obstacles
inside an influence radius, plus a repulsion from each arena wall that grows
as they approach it. The resulting direction is tracked with the evader's
discrete turn-rate and acceleration options. Everything is deterministic:
the same state always produces the same action.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import (
    RobotState,
    WorldConfig,
    WorldState,
    center_distance,
    surface_distance,
    wrap_angle,
)

_MIN_GAP = 1e-3  # repulsion distance floor, keeps forces finite at contact
_ZERO_FORCE = 1e-9


@dataclass
class ApfConfig:
    """Repulsion gains and influence radius for the evader steering field."""

    repulsion_gain_pursuers: float = 1.0
    repulsion_gain_obstacles: float = 0.6
    repulsion_gain_boundary: float = 0.8
    influence_radius: float = 12.0

    def __post_init__(self):
        if min(
            self.repulsion_gain_pursuers,
            self.repulsion_gain_obstacles,
            self.repulsion_gain_boundary,
        ) <= 0.0 or self.influence_radius <= 0.0:
            raise ValueError("APF gains and influence radius must be positive")


def _heading_dir(robot: RobotState) -> np.ndarray:
    return np.array([math.cos(robot.heading), math.sin(robot.heading)])


def apf_direction(
    evader: RobotState,
    world: WorldState,
    apf: ApfConfig,
    cfg: WorldConfig,
) -> np.ndarray:
    """Unit flight direction for one evader.

    When the repulsive forces cancel exactly but threats are present, the
    evader slips sideways: perpendicular to the bearing of the nearest
    threat, on whichever side is closer to its current heading (ties go to
    the counterclockwise side). With no threats in range it keeps heading.
    """
    force = np.zeros(2)
    threats = []  # (distance, tiebreak, center) of pursuers/obstacles in range

    for p in world.active_pursuers():
        d_center = center_distance(evader, p)
        if d_center > apf.influence_radius:
            continue
        gap = max(surface_distance(evader, p), _MIN_GAP)
        away = (evader.position - p.position) / max(d_center, _MIN_GAP)
        force += apf.repulsion_gain_pursuers / gap**2 * away
        threats.append((d_center, p.id, p.position))

    for idx, ob in enumerate(world.obstacles):
        d_center = center_distance(evader, ob)
        if d_center > apf.influence_radius:
            continue
        gap = max(surface_distance(evader, ob), _MIN_GAP)
        away = (evader.position - ob.center) / max(d_center, _MIN_GAP)
        force += apf.repulsion_gain_obstacles / gap**2 * away
        threats.append((d_center, 10_000 + idx, ob.center))

    # Axis-aligned wall repulsion, one term per wall inside the influence
    # radius, pointing back into the arena.
    for axis in (0, 1):
        for sign in (1.0, -1.0):
            wall_gap = max(cfg.arena_half_extent - sign * evader.position[axis], _MIN_GAP)
            if wall_gap <= apf.influence_radius:
                inward = np.zeros(2)
                inward[axis] = -sign
                force += apf.repulsion_gain_boundary / wall_gap**2 * inward

    norm = float(np.linalg.norm(force))
    if norm > _ZERO_FORCE:
        return force / norm
    if threats:
        threats.sort(key=lambda item: (item[0], item[1]))
        toward = threats[0][2] - evader.position
        toward = toward / max(float(np.linalg.norm(toward)), _MIN_GAP)
        left = np.array([-toward[1], toward[0]])
        return left if float(left @ _heading_dir(evader)) >= 0.0 else -left
    return _heading_dir(evader)


def select_action(
    evader: RobotState,
    world: WorldState,
    apf: ApfConfig,
    cfg: WorldConfig,
) -> tuple:
    """(accel, turn_rate) from the evader's discrete sets.

    The turn rate is the option that best aligns next-step heading with the
    APF direction (ties toward the smallest magnitude). The evader
    accelerates toward its speed cap unless the desired direction is more
    than 90 degrees off its current heading, in which case it brakes.
    """
    desired = apf_direction(evader, world, apf, cfg)
    desired_bearing = math.atan2(desired[1], desired[0])

    def turn_error(omega):
        return abs(wrap_angle(desired_bearing - (evader.heading + omega * cfg.dt)))

    omega = min(cfg.evader_turn_rates, key=lambda w: (turn_error(w), abs(w)))

    def next_speed(accel):
        return min(max(evader.speed + accel * cfg.dt, 0.0), cfg.v_max_evader)

    if abs(wrap_angle(desired_bearing - evader.heading)) > math.pi / 2.0:
        accel = min(cfg.evader_accels, key=lambda a: (next_speed(a), abs(a)))
    else:
        accel = min(cfg.evader_accels, key=lambda a: (-next_speed(a), abs(a)))
    return accel, omega

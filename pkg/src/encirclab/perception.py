"""Per-pursuer observation assembly.

Each pursuer sees four entity categories: itself, teammates and obstacles
inside its perceptual radius, and every non-encircled evader regardless of
distance. Entities are expressed in the observer's ego frame, sorted by
distance, truncated to fixed capacities, and zero-padded with a validity
mask so downstream set encoders can ignore empty slots.

Vector layouts (fixed per category):
    ego      [v_x, v_y, d_nearest, pursuit_status]
    team     [p_x, p_y, v_x, v_y, d, theta, pursuit_status]
    evader   [p_x, p_y, v_x, v_y, d, theta, heading_error]
    obstacle [p_x, p_y, r, d, theta]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import (
    ACTIVE,
    RobotState,
    WorldConfig,
    WorldState,
    center_distance,
    surface_distance,
    wrap_angle,
)

EGO_DIM = 4
TEAM_DIM = 7
EVADER_DIM = 7
OBSTACLE_DIM = 5

TEAM_CAPACITY = 5
OBSTACLE_CAPACITY = 5
DEFAULT_EVADER_CAPACITY = 8


@dataclass
class ObservationBundle:
    """One pursuer's local view: fixed-shape arrays plus validity masks."""

    ego: np.ndarray  # (EGO_DIM,)
    team: np.ndarray  # (TEAM_CAPACITY, TEAM_DIM)
    team_mask: np.ndarray  # (TEAM_CAPACITY,) of {0.0, 1.0}
    evaders: np.ndarray  # (evader_capacity, EVADER_DIM)
    evader_mask: np.ndarray
    obstacles: np.ndarray  # (OBSTACLE_CAPACITY, OBSTACLE_DIM)
    obstacle_mask: np.ndarray

    @property
    def evader_capacity(self) -> int:
        return self.evaders.shape[0]


def zero_bundle(evader_capacity: int = DEFAULT_EVADER_CAPACITY) -> ObservationBundle:
    """All-zero bundle (used as the unused next-observation of terminal transitions)."""
    return ObservationBundle(
        ego=np.zeros(EGO_DIM),
        team=np.zeros((TEAM_CAPACITY, TEAM_DIM)),
        team_mask=np.zeros(TEAM_CAPACITY),
        evaders=np.zeros((evader_capacity, EVADER_DIM)),
        evader_mask=np.zeros(evader_capacity),
        obstacles=np.zeros((OBSTACLE_CAPACITY, OBSTACLE_DIM)),
        obstacle_mask=np.zeros(OBSTACLE_CAPACITY),
    )


def to_ego_frame(
    observer: RobotState, point: np.ndarray, velocity: np.ndarray
) -> tuple:
    """World-frame (point, velocity) -> observer's ego frame.

    The point is translated by -observer.position then rotated by
    -observer.heading; the velocity is rotated only.
    """
    c, s = math.cos(observer.heading), math.sin(observer.heading)
    rot = np.array([[c, s], [-s, c]])
    return rot @ (np.asarray(point, dtype=float) - observer.position), rot @ np.asarray(
        velocity, dtype=float
    )


def pursuit_status(robot: RobotState, evaders: list, cfg: WorldConfig) -> float:
    """1.0 iff any non-encircled evader is within 3 * d_encircle (inclusive)."""
    threshold = 3.0 * cfg.d_encircle
    for e in evaders:
        if e.status == ACTIVE and center_distance(robot, e) <= threshold:
            return 1.0
    return 0.0


def nearest_obstacle_distance(robot: RobotState, obstacles: list, cfg: WorldConfig) -> float:
    """Min surface distance to obstacles whose centers are inside r_percept.

    Falls back to r_percept when no obstacle is detected.
    """
    best = None
    for ob in obstacles:
        if center_distance(robot, ob) <= cfg.r_percept:
            d = surface_distance(robot, ob)
            if best is None or d < best:
                best = d
    return cfg.r_percept if best is None else best


def heading_error(observer: RobotState, evader: RobotState) -> float:
    """Evader heading minus the observer->evader line-of-sight bearing, wrapped.

    Zero when the evader flees straight away along the line of sight.
    """
    bearing = math.atan2(
        evader.position[1] - observer.position[1],
        evader.position[0] - observer.position[0],
    )
    return wrap_angle(evader.heading - bearing)


def _sorted_capped(entries: list, capacity: int) -> list:
    """Sort (distance, tiebreak_id, row) entries ascending and truncate."""
    entries.sort(key=lambda item: (item[0], item[1]))
    return entries[:capacity]


def assemble_observation(
    pursuer: RobotState,
    world: WorldState,
    cfg: WorldConfig,
    evader_capacity: int = DEFAULT_EVADER_CAPACITY,
) -> ObservationBundle:
    """Build the pursuer's observation bundle from an immutable world snapshot.

    Teammates are active pursuers within r_percept (nearest TEAM_CAPACITY),
    obstacles likewise within r_percept (nearest OBSTACLE_CAPACITY), and
    evaders are all active (non-encircled) ones with the nearest
    ``evader_capacity`` kept. Distances break ties by id so the ordering is
    deterministic. Padded slots are exactly zero with mask 0.
    """
    if pursuer.status != ACTIVE:
        raise ValueError(f"cannot observe for non-active pursuer {pursuer.id}")

    active_evaders = world.active_evaders()

    team_entries = []
    for mate in world.active_pursuers():
        if mate.id == pursuer.id:
            continue
        d = center_distance(pursuer, mate)
        if d > cfg.r_percept:
            continue
        p_ego, v_ego = to_ego_frame(pursuer, mate.position, mate.velocity())
        theta = math.atan2(p_ego[1], p_ego[0])
        row = [
            p_ego[0],
            p_ego[1],
            v_ego[0],
            v_ego[1],
            d,
            theta,
            pursuit_status(mate, active_evaders, cfg),
        ]
        team_entries.append((d, mate.id, row))

    evader_entries = []
    for e in active_evaders:
        d = center_distance(pursuer, e)
        p_ego, v_ego = to_ego_frame(pursuer, e.position, e.velocity())
        theta = math.atan2(p_ego[1], p_ego[0])
        row = [
            p_ego[0],
            p_ego[1],
            v_ego[0],
            v_ego[1],
            d,
            theta,
            heading_error(pursuer, e),
        ]
        evader_entries.append((d, e.id, row))

    obstacle_entries = []
    for idx, ob in enumerate(world.obstacles):
        d = center_distance(pursuer, ob)
        if d > cfg.r_percept:
            continue
        p_ego, _ = to_ego_frame(pursuer, ob.center, np.zeros(2))
        theta = math.atan2(p_ego[1], p_ego[0])
        obstacle_entries.append((d, idx, [p_ego[0], p_ego[1], ob.radius, d, theta]))

    bundle = zero_bundle(evader_capacity)
    _, ego_v = to_ego_frame(pursuer, pursuer.position, pursuer.velocity())
    bundle.ego[:] = [
        ego_v[0],
        ego_v[1],
        nearest_obstacle_distance(pursuer, world.obstacles, cfg),
        pursuit_status(pursuer, active_evaders, cfg),
    ]
    for i, (_, _, row) in enumerate(_sorted_capped(team_entries, TEAM_CAPACITY)):
        bundle.team[i] = row
        bundle.team_mask[i] = 1.0
    for i, (_, _, row) in enumerate(_sorted_capped(evader_entries, evader_capacity)):
        bundle.evaders[i] = row
        bundle.evader_mask[i] = 1.0
    for i, (_, _, row) in enumerate(_sorted_capped(obstacle_entries, OBSTACLE_CAPACITY)):
        bundle.obstacles[i] = row
        bundle.obstacle_mask[i] = 1.0
    return bundle


def observation_record(pursuer_id: int, t: int, bundle: ObservationBundle) -> dict:
    """JSON-serializable debug record mirroring the observation vectors by name."""

    def rows(matrix, mask, names):
        return [
            dict(zip(names, (float(x) for x in row)))
            for row, valid in zip(matrix, mask)
            if valid > 0.0
        ]

    return {
        "t": t,
        "pursuer_id": pursuer_id,
        "ego": dict(
            zip(("v_x", "v_y", "d_nearest", "pursuit_status"), map(float, bundle.ego))
        ),
        "team": rows(
            bundle.team,
            bundle.team_mask,
            ("p_x", "p_y", "v_x", "v_y", "d", "theta", "pursuit_status"),
        ),
        "evaders": rows(
            bundle.evaders,
            bundle.evader_mask,
            ("p_x", "p_y", "v_x", "v_y", "d", "theta", "heading_error"),
        ),
        "obstacles": rows(
            bundle.obstacles,
            bundle.obstacle_mask,
            ("p_x", "p_y", "r", "d", "theta"),
        ),
    }

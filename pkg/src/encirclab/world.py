"""Deterministic 2D pursuit-evasion world.

Unicycle robots (commanded linear acceleration + angular velocity) drift in a
superposition of Rankine vortex flow fields, inside a square arena with a soft
boundary. Pursuers deactivate on collision with obstacles, other pursuers, or
active evaders; evaders become immobilized once a valid encirclement ring
forms around them. All state transitions are pure functions of the inputs so
episodes replay bit-identically from a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

PURSUER = "pursuer"
EVADER = "evader"

ACTIVE = "active"
INACTIVE = "inactive"
ENCIRCLED = "encircled"

ALL_ENCIRCLED = "all_encircled"
PURSUERS_DEPLETED = "pursuers_depleted"
TIMEOUT = "timeout"

TWO_PI = 2.0 * math.pi


class ConfigurationError(Exception):
    """Raised when a scenario cannot be realized (e.g. spawn placement fails)."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (theta + math.pi) % TWO_PI - math.pi


@dataclass
class Vortex:
    """Rankine vortex: solid-body core of radius ``core_radius``, 1/r decay outside."""

    center: np.ndarray
    circulation: float  # m^2/s, sign sets spin direction
    core_radius: float  # m, > 0

    @property
    def core_angular_velocity(self) -> float:
        """Angular velocity of the solid-body core (rad/s), exact by construction."""
        return self.circulation / (TWO_PI * self.core_radius**2)


@dataclass
class Obstacle:
    """Static circular obstacle, fully inside the arena."""

    center: np.ndarray
    radius: float


@dataclass
class RobotState:
    """One circular robot. Status transitions are one-way from ``active``."""

    id: int
    role: str  # PURSUER or EVADER
    position: np.ndarray
    heading: float  # rad in [-pi, pi)
    speed: float  # m/s, in [0, v_max(role)]
    radius: float
    status: str = ACTIVE

    def velocity(self) -> np.ndarray:
        """Intent velocity (speed along heading), excluding ambient flow."""
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass
class WorldConfig:
    """Scenario geometry, kinematic limits, action sets, and entity counts.

    Every key is loadable by name from a YAML/JSON config file (see
    :mod:`encirclab.config`). Distances in meters, angles in radians.
    """

    arena_half_extent: float = 50.0
    dt: float = 0.5
    d_encircle: float = 5.0
    d_safe: float = 2.0
    r_percept: float = 15.0
    robot_radius: float = 0.5
    psi: float = math.pi  # max allowed angular gap in a ring
    kappa: float = 3.0  # max/min angular-gap ratio bound
    v_max_pursuer: float = 3.0
    v_max_evader: float = 3.5
    pursuer_accels: tuple = (-0.4, 0.0, 0.4)
    pursuer_turn_rates: tuple = (-math.pi / 6, 0.0, math.pi / 6)
    evader_accels: tuple = (-0.4, 0.0, 0.4)
    evader_turn_rates: tuple = (
        -math.pi / 6,
        -math.pi / 12,
        0.0,
        math.pi / 12,
        math.pi / 6,
    )
    n_pursuers: int = 3
    n_evaders: int = 1
    n_obstacles: int = 0
    n_vortices: int = 4
    vortex_core_radius_range: tuple = (2.0, 6.0)
    vortex_circulation_range: tuple = (10.0, 40.0)  # magnitude; sign sampled +/-
    obstacle_radius_range: tuple = (1.0, 3.0)
    spawn_margin: float = 2.0
    spawn_max_retries: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (self.d_safe < self.d_encircle < self.r_percept):
            raise ConfigurationError(
                "require d_safe < d_encircle < r_percept, got "
                f"{self.d_safe}, {self.d_encircle}, {self.r_percept}"
            )
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")

    def v_max(self, role: str) -> float:
        return self.v_max_pursuer if role == PURSUER else self.v_max_evader

    def accels(self, role: str) -> tuple:
        return self.pursuer_accels if role == PURSUER else self.evader_accels

    def turn_rates(self, role: str) -> tuple:
        return self.pursuer_turn_rates if role == PURSUER else self.evader_turn_rates


@dataclass
class WorldState:
    """Full simulation state: robots, static entities, clock, RNG stream."""

    t: int
    robots: list
    obstacles: list
    vortices: list
    rng: np.random.Generator = field(repr=False, default=None)

    def pursuers(self) -> list:
        return [r for r in self.robots if r.role == PURSUER]

    def evaders(self) -> list:
        return [r for r in self.robots if r.role == EVADER]

    def active_pursuers(self) -> list:
        return [r for r in self.robots if r.role == PURSUER and r.status == ACTIVE]

    def active_evaders(self) -> list:
        return [r for r in self.robots if r.role == EVADER and r.status == ACTIVE]

    def robot(self, robot_id: int) -> RobotState:
        for r in self.robots:
            if r.id == robot_id:
                return r
        raise KeyError(f"no robot with id {robot_id}")


@dataclass
class StepEvents:
    """Per-step event record consumed by the reward functions."""

    collided_pursuer_ids: list
    newly_encircled_evader_ids: list
    out_of_bounds_pursuer_ids: list


def vortex_velocity(vortex: Vortex, point: np.ndarray) -> np.ndarray:
    """Flow velocity of one Rankine vortex at ``point``.

    Purely tangential: speed (Gamma/2pi) * r/r0^2 inside the core and
    (Gamma/2pi) / r outside, directed +90 deg from the radial direction for
    positive circulation. The center itself has zero velocity.
    """
    offset = np.asarray(point, dtype=float) - vortex.center
    r = math.hypot(offset[0], offset[1])
    if r == 0.0:
        return np.zeros(2)
    coeff = vortex.circulation / TWO_PI
    if r <= vortex.core_radius:
        v_theta = coeff * r / vortex.core_radius**2
    else:
        v_theta = coeff / r
    tangent = np.array([-offset[1], offset[0]]) / r
    return v_theta * tangent


def ambient_flow(vortices: list, point: np.ndarray) -> np.ndarray:
    """Superposition of all vortex fields at ``point``."""
    flow = np.zeros(2)
    for v in vortices:
        flow += vortex_velocity(v, point)
    return flow


def integrate_robot(
    robot: RobotState,
    action: tuple,
    flow: np.ndarray,
    dt: float,
    v_max: float,
) -> RobotState:
    """Advance one active robot by dt under (accel, turn rate) and ambient flow.

    Heading and speed update first; the new values drive the position update.
    Flow enters as an additive drift on position, not as a force.
    """
    accel, omega = action
    heading = wrap_angle(robot.heading + omega * dt)
    speed = min(max(robot.speed + accel * dt, 0.0), v_max)
    direction = np.array([math.cos(heading), math.sin(heading)])
    position = robot.position + (speed * direction + flow) * dt
    return replace(robot, position=position, heading=heading, speed=speed)


def _center(entity) -> np.ndarray:
    return entity.position if isinstance(entity, RobotState) else entity.center


def surface_distance(a, b) -> float:
    """Signed gap between two circular entities; negative means overlap."""
    ca, cb = _center(a), _center(b)
    return float(math.hypot(ca[0] - cb[0], ca[1] - cb[1]) - a.radius - b.radius)


def center_distance(a, b) -> float:
    ca, cb = _center(a), _center(b)
    return float(math.hypot(ca[0] - cb[0], ca[1] - cb[1]))


def angular_gaps(evader: RobotState, pursuers_in_radius: list) -> list:
    """Angular gaps between consecutive pursuer bearings seen from the evader.

    Bearings are sorted and consecutive differences returned, including the
    wrap-around gap, so the gaps always sum to 2*pi. A single pursuer yields
    the degenerate [2*pi].
    """
    if not pursuers_in_radius:
        raise ValueError("angular_gaps requires at least one pursuer")
    bearings = sorted(
        math.atan2(p.position[1] - evader.position[1], p.position[0] - evader.position[0])
        for p in pursuers_in_radius
    )
    if len(bearings) == 1:
        return [TWO_PI]
    gaps = [b2 - b1 for b1, b2 in zip(bearings, bearings[1:])]
    gaps.append(bearings[0] + TWO_PI - bearings[-1])
    return gaps


def encircling_pursuers(evader: RobotState, world: WorldState, cfg: WorldConfig) -> list:
    """Active pursuers within the encirclement radius of ``evader``."""
    return [
        p
        for p in world.active_pursuers()
        if center_distance(p, evader) <= cfg.d_encircle
    ]


def is_encircled(evader: RobotState, world: WorldState, cfg: WorldConfig) -> bool:
    """Ring test: >=3 in-radius active pursuers, max gap <= psi and <= kappa*min gap."""
    ring = encircling_pursuers(evader, world, cfg)
    if len(ring) < 3:
        return False
    gaps = angular_gaps(evader, ring)
    return max(gaps) <= cfg.psi and max(gaps) <= cfg.kappa * min(gaps)


def out_of_bounds(position: np.ndarray, cfg: WorldConfig) -> bool:
    return bool(
        abs(position[0]) > cfg.arena_half_extent
        or abs(position[1]) > cfg.arena_half_extent
    )


def step(
    world: WorldState,
    pursuer_actions: dict,
    evader_actions: dict,
    cfg: WorldConfig,
) -> tuple:
    """Advance the world one timestep; returns (new_state, events).

    All active robots integrate simultaneously with ambient flow sampled at
    their pre-step positions. Collisions are then resolved on the post-step
    configuration (colliding pursuers become inactive; both sides of a
    pursuer-pursuer contact deactivate), encirclement is re-evaluated for
    every active evader, and boundary violations are recorded as events
    without clamping anyone's position.
    """
    active_p = {r.id for r in world.active_pursuers()}
    active_e = {r.id for r in world.active_evaders()}
    if set(pursuer_actions) != active_p:
        raise ValueError(
            f"pursuer actions must cover exactly ids {sorted(active_p)}, "
            f"got {sorted(pursuer_actions)}"
        )
    if set(evader_actions) != active_e:
        raise ValueError(
            f"evader actions must cover exactly ids {sorted(active_e)}, "
            f"got {sorted(evader_actions)}"
        )

    new_robots = []
    for r in world.robots:
        if r.status != ACTIVE:
            new_robots.append(replace(r, position=r.position.copy()))
            continue
        action = pursuer_actions[r.id] if r.role == PURSUER else evader_actions[r.id]
        flow = ambient_flow(world.vortices, r.position)
        new_robots.append(integrate_robot(r, action, flow, cfg.dt, cfg.v_max(r.role)))

    new_world = WorldState(
        t=world.t + 1,
        robots=new_robots,
        obstacles=world.obstacles,
        vortices=world.vortices,
        rng=world.rng,
    )

    # Collision pass over pursuers that acted this step. All simultaneous
    # overlaps take effect; already-inactive robots and encircled evaders do
    # not participate.
    movers = [r for r in new_robots if r.role == PURSUER and r.id in active_p]
    live_evaders = [r for r in new_robots if r.role == EVADER and r.status == ACTIVE]
    collided = set()
    for i, p in enumerate(movers):
        for q in movers[i + 1 :]:
            if surface_distance(p, q) < 0.0:
                collided.add(p.id)
                collided.add(q.id)
        for ob in world.obstacles:
            if surface_distance(p, ob) < 0.0:
                collided.add(p.id)
        for e in live_evaders:
            if surface_distance(p, e) < 0.0:
                collided.add(p.id)
    for r in new_robots:
        if r.id in collided:
            r.status = INACTIVE

    newly_encircled = []
    for e in live_evaders:
        if is_encircled(e, new_world, cfg):
            newly_encircled.append(e.id)
    for r in new_robots:
        if r.id in newly_encircled:
            r.status = ENCIRCLED

    oob = [
        r.id
        for r in new_robots
        if r.role == PURSUER and r.id in active_p and out_of_bounds(r.position, cfg)
    ]

    events = StepEvents(
        collided_pursuer_ids=sorted(collided),
        newly_encircled_evader_ids=sorted(newly_encircled),
        out_of_bounds_pursuer_ids=sorted(oob),
    )
    return new_world, events


def check_termination(world: WorldState, limit: int) -> Optional[str]:
    """Episode outcome, or None while the episode is still running.

    Precedence: all evaders encircled, then active pursuers < 3, then timeout.
    """
    evaders = world.evaders()
    if evaders and all(e.status == ENCIRCLED for e in evaders):
        return ALL_ENCIRCLED
    if len(world.active_pursuers()) < 3:
        return PURSUERS_DEPLETED
    if world.t >= limit:
        return TIMEOUT
    return None


def _sample_position(rng: np.random.Generator, half_extent: float, pad: float) -> np.ndarray:
    lo, hi = -half_extent + pad, half_extent - pad
    if hi <= lo:
        raise ConfigurationError("arena too small for entity radius")
    return rng.uniform(lo, hi, size=2)


def _place(rng, cfg, radius, placed) -> np.ndarray:
    """Rejection-sample a center keeping >= spawn_margin surface gap to everything."""
    for _ in range(cfg.spawn_max_retries):
        pos = _sample_position(rng, cfg.arena_half_extent, radius)
        ok = True
        for other_pos, other_radius in placed:
            gap = math.hypot(*(pos - other_pos)) - radius - other_radius
            if gap < cfg.spawn_margin:
                ok = False
                break
        if ok:
            return pos
    raise ConfigurationError(
        f"could not place entity of radius {radius} after "
        f"{cfg.spawn_max_retries} retries; arena too crowded"
    )


def init_episode(cfg: WorldConfig, seed: int) -> WorldState:
    """Randomly initialize an episode; identical seeds give identical states.

    Placement order is fixed (obstacles, vortices, pursuers, evaders) and each
    entity keeps a surface gap of at least ``spawn_margin`` to everything
    placed before it. Vortices participate as zero-radius points so no robot
    spawns on a vortex center.
    """
    rng = np.random.default_rng(seed)
    placed = []

    obstacles = []
    for _ in range(cfg.n_obstacles):
        radius = float(rng.uniform(*cfg.obstacle_radius_range))
        pos = _place(rng, cfg, radius, placed)
        obstacles.append(Obstacle(center=pos, radius=radius))
        placed.append((pos, radius))

    vortices = []
    for _ in range(cfg.n_vortices):
        core = float(rng.uniform(*cfg.vortex_core_radius_range))
        magnitude = float(rng.uniform(*cfg.vortex_circulation_range))
        sign = 1.0 if rng.integers(0, 2) == 1 else -1.0
        pos = _place(rng, cfg, 0.0, placed)
        vortices.append(Vortex(center=pos, circulation=sign * magnitude, core_radius=core))
        placed.append((pos, 0.0))

    robots = []
    robot_id = 0
    for role, count in ((PURSUER, cfg.n_pursuers), (EVADER, cfg.n_evaders)):
        for _ in range(count):
            pos = _place(rng, cfg, cfg.robot_radius, placed)
            heading = float(rng.uniform(-math.pi, math.pi))
            robots.append(
                RobotState(
                    id=robot_id,
                    role=role,
                    position=pos,
                    heading=heading,
                    speed=0.0,
                    radius=cfg.robot_radius,
                )
            )
            placed.append((pos, cfg.robot_radius))
            robot_id += 1

    return WorldState(t=0, robots=robots, obstacles=obstacles, vortices=vortices, rng=rng)


def joint_action_table(cfg: WorldConfig, role: str) -> list:
    """Joint discrete actions (accel, turn_rate) in acceleration-major index order."""
    return [(a, w) for a in cfg.accels(role) for w in cfg.turn_rates(role)]


def trajectory_line(world: WorldState) -> str:
    """One line per timestep: t then (id, role, status, x, y, heading, speed) per robot."""
    fields = [str(world.t)]
    for r in world.robots:
        fields.extend(
            [
                str(r.id),
                r.role,
                r.status,
                repr(float(r.position[0])),
                repr(float(r.position[1])),
                repr(float(r.heading)),
                repr(float(r.speed)),
            ]
        )
    return ",".join(fields)

"""Shared builders for hand-placed worlds and small policies."""

import math

import numpy as np
import pytest

from encirclab.perception import ObservationBundle, zero_bundle
from encirclab.policy import PolicyConfig, build_policy
from encirclab.world import (
    ACTIVE,
    EVADER,
    PURSUER,
    Obstacle,
    RobotState,
    Vortex,
    WorldConfig,
    WorldState,
)


def make_robot(robot_id, role, position, heading=0.0, speed=0.0, radius=0.5, status=ACTIVE):
    return RobotState(
        id=robot_id,
        role=role,
        position=np.array(position, dtype=float),
        heading=heading,
        speed=speed,
        radius=radius,
        status=status,
    )


def make_world(pursuers=(), evaders=(), obstacles=(), vortices=(), t=0):
    """World from explicit robot specs: each entry is (position,) or a RobotState."""
    robots = []
    next_id = 0
    for spec in pursuers:
        if isinstance(spec, RobotState):
            robots.append(spec)
        else:
            robots.append(make_robot(next_id, PURSUER, spec))
        next_id = max(next_id + 1, max((r.id for r in robots), default=-1) + 1)
    for spec in evaders:
        if isinstance(spec, RobotState):
            robots.append(spec)
        else:
            robots.append(make_robot(next_id, EVADER, spec))
        next_id = max(next_id + 1, max((r.id for r in robots), default=-1) + 1)
    return WorldState(
        t=t,
        robots=robots,
        obstacles=list(obstacles),
        vortices=list(vortices),
        rng=np.random.default_rng(0),
    )


def ring_world(bearings, distance=4.0, evader_position=(0.0, 0.0), extra_pursuers=()):
    """Evader at ``evader_position`` with pursuers at given bearings and range."""
    ex, ey = evader_position
    pursuer_specs = [
        (ex + distance * math.cos(b), ey + distance * math.sin(b)) for b in bearings
    ]
    pursuer_specs.extend(extra_pursuers)
    return make_world(pursuers=pursuer_specs, evaders=[(ex, ey)])


def random_bundle(rng, evader_capacity=8, n_team=3, n_evaders=2, n_obstacles=2):
    """Synthetic valid observation bundle with the given occupancy."""
    bundle = zero_bundle(evader_capacity)
    bundle.ego[:] = rng.normal(size=4)
    for i in range(n_team):
        bundle.team[i] = rng.normal(size=7)
        bundle.team_mask[i] = 1.0
    for i in range(n_evaders):
        bundle.evaders[i] = rng.normal(size=7)
        bundle.evader_mask[i] = 1.0
    for i in range(n_obstacles):
        bundle.obstacles[i] = rng.normal(size=5)
        bundle.obstacle_mask[i] = 1.0
    return bundle


def small_policy_config(variant="terl", dtype="float64", **overrides):
    defaults = dict(
        latent_dim=16,
        heads=2,
        relation_layers=2,
        quantile_samples=4,
        target_quantile_samples=4,
        eval_quantile_samples=8,
        quantile_embedding_size=8,
        variant=variant,
        dtype=dtype,
    )
    defaults.update(overrides)
    return PolicyConfig(**defaults)


@pytest.fixture
def small_world_cfg():
    return WorldConfig(n_pursuers=3, n_evaders=1, n_obstacles=1, n_vortices=2, seed=0)

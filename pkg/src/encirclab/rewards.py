"""Per-pursuer reward computation (centralized-training side).

Rewards may read global state; execution never does. All branch constants
are fixed by the task definition and verified by a table-driven test suite:
collision -80, danger-zone -5, tracking plateau +5 with exp(-0.05 d) decay,
overcrowding -10, cooperation slope 0.3, completion scale 120 * (2*pi/n) *
exp(-sigma), per-step time penalty -1, boundary penalty -5.

Distance conventions: the safety terms use surface distances (so negative
means contact), the cooperation head-count uses center distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .world import (
    ACTIVE,
    StepEvents,
    WorldConfig,
    WorldState,
    angular_gaps,
    center_distance,
    encircling_pursuers,
    surface_distance,
)

COLLISION_PENALTY = -80.0
DANGER_PENALTY = -5.0
TRACKING_REWARD = 5.0
TRACKING_DECAY = 0.05
OVERCROWD_PENALTY = -10.0
COOP_SLOPE = 0.3
COOP_MIN_COUNT = 3
COOP_MAX_COUNT = 5
MISALLOCATION_PENALTY = -10.0
BOUNDARY_PENALTY = -5.0
COMPLETION_SCALE = 120.0
TIME_PENALTY = -1.0


@dataclass
class RewardBreakdown:
    """Additive reward components for one pursuer on one step."""

    r_d1: float = 0.0
    r_d2_sum: float = 0.0
    r_coop: float = 0.0
    r_boundary: float = 0.0
    r_completion: float = 0.0
    r_time: float = 0.0

    @property
    def total(self) -> float:
        return (
            self.r_d1
            + self.r_d2_sum
            + self.r_coop
            + self.r_boundary
            + self.r_completion
            + self.r_time
        )


def safety_guidance(pursuer, world: WorldState, cfg: WorldConfig) -> tuple:
    """(r_d1, r_d2_sum) for one pursuer against a world snapshot.

    d_min ranges over observed entities only: active teammates and obstacles
    within r_percept, plus every active evader (observable at any range).
    r_d2 accrues per active evader from its surface distance d_e: +5 on the
    [d_safe, d_encircle] plateau, exponentially decaying beyond it, nothing
    inside d_safe (the danger zone is already covered by r_d1).
    """
    d_min = math.inf
    for mate in world.active_pursuers():
        if mate.id == pursuer.id:
            continue
        if center_distance(pursuer, mate) <= cfg.r_percept:
            d_min = min(d_min, surface_distance(pursuer, mate))
    for ob in world.obstacles:
        if center_distance(pursuer, ob) <= cfg.r_percept:
            d_min = min(d_min, surface_distance(pursuer, ob))
    for e in world.active_evaders():
        d_min = min(d_min, surface_distance(pursuer, e))

    if d_min < 0.0:
        r_d1 = COLLISION_PENALTY
    elif d_min < cfg.d_safe:
        r_d1 = DANGER_PENALTY
    else:
        r_d1 = 0.0

    r_d2_sum = 0.0
    for e in world.active_evaders():
        d_e = surface_distance(pursuer, e)
        if d_e > cfg.d_encircle:
            r_d2_sum += TRACKING_REWARD * math.exp(-TRACKING_DECAY * (d_e - cfg.d_encircle))
        elif d_e >= cfg.d_safe:
            r_d2_sum += TRACKING_REWARD
    return r_d1, r_d2_sum


def cooperation(world: WorldState, cfg: WorldConfig) -> dict:
    """Cooperation reward per active pursuer id, from global head counts.

    For each active evader, P = active pursuers within 3 * d_encircle (center
    distance); those P pursuers each collect the crowding-balance payment.
    If some evader is under-covered (P < 3) while another is over-covered
    (P > 5) at the same time, every active pursuer is additionally penalized.
    """
    d_related = 3.0 * cfg.d_encircle
    pursuers = world.active_pursuers()
    payments = {p.id: 0.0 for p in pursuers}
    counts = []
    for e in world.active_evaders():
        nearby = [p for p in pursuers if center_distance(p, e) <= d_related]
        count = len(nearby)
        counts.append(count)
        if count >= COOP_MAX_COUNT:
            payment = OVERCROWD_PENALTY
        elif count >= COOP_MIN_COUNT:
            payment = TRACKING_REWARD * max(0.0, 1.0 - COOP_SLOPE * (count - COOP_MIN_COUNT))
        else:
            payment = 0.0
        for p in nearby:
            payments[p.id] += payment
    if any(c < COOP_MIN_COUNT for c in counts) and any(c > COOP_MAX_COUNT for c in counts):
        for pid in payments:
            payments[pid] += MISALLOCATION_PENALTY
    return payments


def boundary_penalty(events: StepEvents) -> dict:
    """-5 for every pursuer flagged out of bounds this step."""
    return {pid: BOUNDARY_PENALTY for pid in events.out_of_bounds_pursuer_ids}


def completion(n_k: int, sigma: float) -> float:
    """Encirclement completion payment 120 * (2*pi/n_k) * exp(-sigma)."""
    if n_k < COOP_MIN_COUNT:
        raise ValueError(f"completion requires n_k >= 3, got {n_k}")
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return COMPLETION_SCALE * (2.0 * math.pi / n_k) * math.exp(-sigma)


def _gap_std(gaps: list) -> float:
    mean = sum(gaps) / len(gaps)
    return math.sqrt(sum((g - mean) ** 2 for g in gaps) / len(gaps))


def completion_payments(world_after: WorldState, events: StepEvents, cfg: WorldConfig) -> dict:
    """Completion reward per pursuer for evaders newly encircled this step.

    Each ring member of a newly encircled evader receives the full payment;
    sigma is the population standard deviation of that evader's angular gaps.
    Ring membership is recomputed from the post-step state, which is exact
    because encircled evaders never move again.
    """
    payments = {}
    for eid in events.newly_encircled_evader_ids:
        evader = world_after.robot(eid)
        ring = encircling_pursuers(evader, world_after, cfg)
        gaps = angular_gaps(evader, ring)
        amount = completion(len(ring), _gap_std(gaps))
        for p in ring:
            payments[p.id] = payments.get(p.id, 0.0) + amount
    return payments


def step_rewards(
    world_before: WorldState,
    world_after: WorldState,
    events: StepEvents,
    cfg: WorldConfig,
) -> dict:
    """RewardBreakdown per pursuer that was active at the start of the step.

    Distance terms are evaluated on the post-step world; collision and
    boundary terms come from the step events (so a collision still costs -80
    even if the collider sat at the perception edge). Pursuers inactive
    before the step receive nothing.
    """
    coop = cooperation(world_after, cfg)
    bounds = boundary_penalty(events)
    completions = completion_payments(world_after, events, cfg)
    collided = set(events.collided_pursuer_ids)

    breakdowns = {}
    for before in world_before.active_pursuers():
        after = world_after.robot(before.id)
        r_d1, r_d2_sum = safety_guidance(after, world_after, cfg)
        if before.id in collided:
            r_d1 = COLLISION_PENALTY
        breakdowns[before.id] = RewardBreakdown(
            r_d1=r_d1,
            r_d2_sum=r_d2_sum,
            r_coop=coop.get(before.id, 0.0),
            r_boundary=bounds.get(before.id, 0.0),
            r_completion=completions.get(before.id, 0.0),
            r_time=TIME_PENALTY,
        )
    return breakdowns


def reward_record(t: int, pursuer_id: int, breakdown: RewardBreakdown) -> dict:
    """JSON-serializable per-step reward log record."""
    return {
        "t": t,
        "pursuer_id": pursuer_id,
        "r_d1": breakdown.r_d1,
        "r_d2_sum": breakdown.r_d2_sum,
        "r_coop": breakdown.r_coop,
        "r_boundary": breakdown.r_boundary,
        "r_completion": breakdown.r_completion,
        "r_time": breakdown.r_time,
        "total": breakdown.total,
    }

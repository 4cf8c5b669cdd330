"""Scenario evaluation: episode rollouts, metrics, and result export.

Evaluation is strictly decentralized: the loop hands each pursuer only its
own observation bundle, uses epsilon 0 with the deterministic quantile grid,
and is therefore a pure function of (policy, scenario, base seed). Trial i of
a scenario runs with seed base_seed + i (base 1000 by default).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .evader import ApfConfig, select_action as evader_action
from .perception import assemble_observation, observation_record
from .policy import ActionPolicy
from .rewards import reward_record, step_rewards
from .world import (
    ALL_ENCIRCLED,
    INACTIVE,
    WorldConfig,
    check_termination,
    init_episode,
    joint_action_table,
    step,
    trajectory_line,
)

DEFAULT_EVAL_SEED = 1000


@dataclass
class ScenarioSpec:
    """Entity counts plus episode cap and trial count for one benchmark setting."""

    name: str
    pursuers: int
    evaders: int
    obstacles: int
    vortices: int
    episode_cap: int = 1000
    trials: int = 20


_CATALOG_ROWS = (
    ("small-1", 11, 3, 2, 8),
    ("small-2", 15, 4, 4, 8),
    ("small-3", 19, 5, 6, 8),
    ("medium-1", 48, 12, 8, 8),
    ("medium-2", 51, 13, 8, 8),
    ("medium-3", 56, 14, 8, 8),
    ("large-1", 72, 18, 8, 8),
    ("large-2", 76, 19, 8, 8),
    ("large-3", 80, 20, 8, 8),
    ("CC", 28, 14, 8, 8),
)


def scenario_catalog() -> list:
    """The ten built-in benchmark scenarios."""
    return [ScenarioSpec(name, p, e, o, v) for name, p, e, o, v in _CATALOG_ROWS]


def scenario_by_name(name: str, catalog: Optional[list] = None) -> ScenarioSpec:
    for scenario in catalog if catalog is not None else scenario_catalog():
        if scenario.name == name:
            return scenario
    raise KeyError(f"unknown scenario {name!r}")


@dataclass
class TrialRecord:
    """Outcome of one evaluation episode."""

    seed: int
    outcome: str
    termination_timestep: int
    travel_time_s: float
    collided_pursuers: int
    total_pursuers: int
    scenario: str = ""
    variant: str = ""


@dataclass
class Metrics:
    """Aggregate over a scenario's trials.

    Travel time averages over all episodes (successful or not); the collision
    ratio pools pursuers across trials. std is the population deviation.
    """

    success_rate: float
    mean_travel_time_s: float
    std_travel_time_s: float
    collision_ratio: float
    trials: int


def run_episode(
    policy: ActionPolicy,
    scenario: ScenarioSpec,
    seed: int,
    world_cfg: Optional[WorldConfig] = None,
    apf_cfg: Optional[ApfConfig] = None,
    evader_capacity: Optional[int] = None,
    trajectory_path=None,
    reward_log_path=None,
    observation_dump_path=None,
    initial_world=None,
) -> TrialRecord:
    """Roll one evaluation episode to termination or the scenario cap.

    ``initial_world`` substitutes a pre-seeded state for the seeded random
    initialization (the seed then only labels the record).
    """
    world_cfg = world_cfg or WorldConfig()
    apf_cfg = apf_cfg or ApfConfig()
    if evader_capacity is None:
        evader_capacity = getattr(getattr(policy, "cfg", None), "evader_capacity", 8)
    wcfg = replace(
        world_cfg,
        n_pursuers=scenario.pursuers,
        n_evaders=scenario.evaders,
        n_obstacles=scenario.obstacles,
        n_vortices=scenario.vortices,
    )
    pursuer_table = joint_action_table(wcfg, "pursuer")
    rng = np.random.default_rng(seed)  # consumed only by stochastic baselines
    world = init_episode(wcfg, seed) if initial_world is None else initial_world

    traj_fh = open(trajectory_path, "w") if trajectory_path else None
    reward_fh = open(reward_log_path, "w") if reward_log_path else None
    obs_fh = open(observation_dump_path, "w") if observation_dump_path else None
    try:
        if traj_fh:
            traj_fh.write(trajectory_line(world) + "\n")
        outcome = None
        while outcome is None:
            pursuers = world.active_pursuers()
            bundles = [
                assemble_observation(p, world, wcfg, evader_capacity) for p in pursuers
            ]
            if obs_fh:
                for p, bundle in zip(pursuers, bundles):
                    obs_fh.write(json.dumps(observation_record(p.id, world.t, bundle)) + "\n")
            actions = policy.select_actions(bundles, 0.0, rng, deterministic_taus=True)
            pursuer_actions = {
                p.id: pursuer_table[int(a)] for p, a in zip(pursuers, actions)
            }
            evader_actions = {
                e.id: evader_action(e, world, apf_cfg, wcfg)
                for e in world.active_evaders()
            }
            new_world, events = step(world, pursuer_actions, evader_actions, wcfg)
            if reward_fh:
                for pid, breakdown in step_rewards(world, new_world, events, wcfg).items():
                    reward_fh.write(json.dumps(reward_record(new_world.t, pid, breakdown)) + "\n")
            world = new_world
            if traj_fh:
                traj_fh.write(trajectory_line(world) + "\n")
            outcome = check_termination(world, scenario.episode_cap)
    finally:
        for fh in (traj_fh, reward_fh, obs_fh):
            if fh:
                fh.close()

    collided = sum(1 for p in world.pursuers() if p.status == INACTIVE)
    return TrialRecord(
        seed=seed,
        outcome=outcome,
        termination_timestep=world.t,
        travel_time_s=world.t * wcfg.dt,
        collided_pursuers=collided,
        total_pursuers=scenario.pursuers,
        scenario=scenario.name,
    )


def evaluate(
    policy: ActionPolicy,
    scenario: ScenarioSpec,
    world_cfg: Optional[WorldConfig] = None,
    apf_cfg: Optional[ApfConfig] = None,
    base_seed: int = DEFAULT_EVAL_SEED,
    variant: str = "",
    trajectory_dir=None,
) -> tuple:
    """(Metrics, trial records) over seeds base_seed .. base_seed + trials - 1."""
    if scenario.trials < 1:
        raise ValueError("evaluate requires at least one trial")
    if trajectory_dir is not None:
        trajectory_dir = Path(trajectory_dir)
        trajectory_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(scenario.trials):
        seed = base_seed + i
        trajectory_path = None
        if trajectory_dir is not None:
            trajectory_path = trajectory_dir / f"{scenario.name}_seed{seed}.traj"
        record = run_episode(
            policy,
            scenario,
            seed,
            world_cfg=world_cfg,
            apf_cfg=apf_cfg,
            trajectory_path=trajectory_path,
        )
        record.variant = variant
        records.append(record)
    return aggregate_metrics(records), records


def aggregate_metrics(records: list) -> Metrics:
    """Re-derivable aggregation of raw trial records."""
    times = [r.travel_time_s for r in records]
    successes = sum(1 for r in records if r.outcome == ALL_ENCIRCLED)
    collided = sum(r.collided_pursuers for r in records)
    pooled = sum(r.total_pursuers for r in records)
    mean_time = sum(times) / len(times)
    variance = sum((t - mean_time) ** 2 for t in times) / len(times)
    return Metrics(
        success_rate=successes / len(records),
        mean_travel_time_s=mean_time,
        std_travel_time_s=math.sqrt(variance),
        collision_ratio=collided / pooled,
        trials=len(records),
    )


EXPORT_COLUMNS = ("scenario", "variant", "seed", "outcome", "travel_time_s", "collided", "pursuers")


def _export_rows(records: list) -> list:
    rows = [
        {
            "scenario": r.scenario,
            "variant": r.variant,
            "seed": r.seed,
            "outcome": r.outcome,
            "travel_time_s": r.travel_time_s,
            "collided": r.collided_pursuers,
            "pursuers": r.total_pursuers,
        }
        for r in records
    ]
    rows.sort(key=lambda row: (row["scenario"], row["variant"], row["seed"]))
    return rows


def export_results(records: list, path, fmt: str = "csv") -> None:
    """Write trial records sorted by (scenario, variant, seed) as CSV or JSON lines."""
    rows = _export_rows(records)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EXPORT_COLUMNS)
            for row in rows:
                writer.writerow(
                    [
                        row["scenario"],
                        row["variant"],
                        row["seed"],
                        row["outcome"],
                        repr(row["travel_time_s"]),
                        row["collided"],
                        row["pursuers"],
                    ]
                )
    elif fmt == "jsonl":
        with open(path, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown export format {fmt!r}; use csv or jsonl")


def load_results(path, fmt: str = "csv") -> list:
    """Parse an exported results file back into row dicts (round-trip of export)."""
    rows = []
    if fmt == "csv":
        with open(path, newline="") as fh:
            for raw in csv.DictReader(fh):
                rows.append(
                    {
                        "scenario": raw["scenario"],
                        "variant": raw["variant"],
                        "seed": int(raw["seed"]),
                        "outcome": raw["outcome"],
                        "travel_time_s": float(raw["travel_time_s"]),
                        "collided": int(raw["collided"]),
                        "pursuers": int(raw["pursuers"]),
                    }
                )
    elif fmt == "jsonl":
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    else:
        raise ValueError(f"unknown export format {fmt!r}; use csv or jsonl")
    return rows

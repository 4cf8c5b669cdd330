"""Command-line surface: train / eval / replay.

Examples:
    encirclab train --config cfg.yaml --variant terl --seed 0 --out runs/terl
    encirclab eval --checkpoint runs/terl/policy_final.ckpt --scenario CC \
        --out cc_results.csv --format csv
    encirclab replay --checkpoint runs/terl/policy_final.ckpt --scenario small-1 \
        --seed 7 --trajectories episode.traj
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import (
    apf_config_from_dict,
    load_config_file,
    policy_config_from_dict,
    scenarios_from_config,
    train_config_from_dict,
    world_config_from_dict,
)
from .harness import (
    DEFAULT_EVAL_SEED,
    evaluate,
    export_results,
    run_episode,
    scenario_by_name,
)
from .policy import load_policy, normalize_variant
from .training import CurriculumStage, run_training

VARIANT_CHOICES = ("terl", "terl-no-re", "terl-no-ts", "iqn", "dqn", "mean")


def _add_common(parser):
    parser.add_argument("--config", type=Path, help="YAML/JSON config file")
    parser.add_argument("--seed", type=int, help="seed override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="encirclab", description="Multi-robot multi-target encirclement lab"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a policy variant")
    _add_common(train)
    train.add_argument("--variant", choices=VARIANT_CHOICES, default="terl")
    train.add_argument("--scenario", help="fix a single-stage curriculum to this scenario")
    train.add_argument("--out", type=Path, default=Path("runs"), help="output directory")

    evl = sub.add_parser("eval", help="evaluate a checkpoint on a scenario")
    _add_common(evl)
    evl.add_argument("--checkpoint", type=Path, required=True)
    evl.add_argument("--scenario", required=True)
    evl.add_argument("--variant", choices=VARIANT_CHOICES, help="assert checkpoint variant")
    evl.add_argument("--episodes", type=int, help="override the scenario trial count")
    evl.add_argument("--out", type=Path, help="results file (default stdout summary only)")
    evl.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    evl.add_argument("--trajectories", type=Path, help="directory for per-trial trajectory dumps")

    rep = sub.add_parser("replay", help="roll one episode and dump its trajectory")
    _add_common(rep)
    rep.add_argument("--checkpoint", type=Path, required=True)
    rep.add_argument("--scenario", required=True)
    rep.add_argument("--variant", choices=VARIANT_CHOICES, help="assert checkpoint variant")
    rep.add_argument("--trajectories", type=Path, required=True, help="trajectory output file")
    rep.add_argument("--reward-log", type=Path, help="JSON-lines per-step reward breakdowns")
    rep.add_argument("--obs-dump", type=Path, help="JSON-lines per-pursuer observation records")
    return parser


def _load_sections(args):
    data = load_config_file(args.config) if args.config else {}
    world_cfg = world_config_from_dict(data.get("world"))
    apf_cfg = apf_config_from_dict(data.get("apf"))
    catalog = scenarios_from_config(data["scenarios"]) if "scenarios" in data else None
    return data, world_cfg, apf_cfg, catalog


def _cmd_train(args) -> int:
    data, world_cfg, apf_cfg, catalog = _load_sections(args)
    train_cfg = train_config_from_dict(data.get("train"))
    policy_cfg = policy_config_from_dict(data.get("policy"))
    policy_cfg = dataclasses.replace(policy_cfg, variant=normalize_variant(args.variant))
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    if args.scenario:
        spec = scenario_by_name(args.scenario, catalog)
        train_cfg.custom_stages = (
            CurriculumStage(
                0, train_cfg.total_steps + 1, spec.pursuers, spec.evaders,
                spec.obstacles, spec.vortices,
            ),
        )
    result = run_training(train_cfg, world_cfg, policy_cfg, apf_cfg, out_dir=args.out)
    print(f"trained {result.steps} steps over {result.episodes} episodes")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"learning log: {result.log_path}")
    return 0


def _cmd_eval(args) -> int:
    _, world_cfg, apf_cfg, catalog = _load_sections(args)
    scenario = scenario_by_name(args.scenario, catalog)
    if args.episodes is not None:
        scenario = dataclasses.replace(scenario, trials=args.episodes)
    policy = load_policy(args.checkpoint, expected_variant=args.variant)
    base_seed = args.seed if args.seed is not None else DEFAULT_EVAL_SEED
    metrics, records = evaluate(
        policy,
        scenario,
        world_cfg=world_cfg,
        apf_cfg=apf_cfg,
        base_seed=base_seed,
        variant=policy.cfg.variant,
        trajectory_dir=args.trajectories,
    )
    print(
        f"{scenario.name}: success_rate={metrics.success_rate:.2f} "
        f"travel_time={metrics.mean_travel_time_s:.2f}s "
        f"(std {metrics.std_travel_time_s:.2f}) "
        f"collision_ratio={metrics.collision_ratio:.2f} over {metrics.trials} trials"
    )
    if args.out:
        export_results(records, args.out, args.format)
        print(f"results written to {args.out}")
    return 0


def _cmd_replay(args) -> int:
    _, world_cfg, apf_cfg, catalog = _load_sections(args)
    scenario = scenario_by_name(args.scenario, catalog)
    policy = load_policy(args.checkpoint, expected_variant=args.variant)
    seed = args.seed if args.seed is not None else DEFAULT_EVAL_SEED
    record = run_episode(
        policy,
        scenario,
        seed,
        world_cfg=world_cfg,
        apf_cfg=apf_cfg,
        trajectory_path=args.trajectories,
        reward_log_path=args.reward_log,
        observation_dump_path=args.obs_dump,
    )
    print(
        f"{scenario.name} seed {seed}: {record.outcome} at t={record.termination_timestep} "
        f"({record.travel_time_s:.1f}s), {record.collided_pursuers}/{record.total_pursuers} collided"
    )
    print(f"trajectory written to {args.trajectories}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"train": _cmd_train, "eval": _cmd_eval, "replay": _cmd_replay}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())

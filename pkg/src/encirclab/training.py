"""Off-policy distributional TD training with curriculum scheduling.

One shared policy collects a transition per active pursuer per environment
step into a single replay buffer. Updates follow the quantile-regression TD
rule (plain Huber TD for the DQN variant) against a hard-synced target
network, with linear epsilon annealing. Scenario difficulty follows the
five-stage curriculum table, compressible to desk scale by a single factor,
or a custom stage list. Everything downstream of (seed, config) is
bit-reproducible, including the CSV learning log.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .evader import ApfConfig, select_action as evader_action
from .netops import ParamStore, adam_step, huber
from .perception import ObservationBundle, assemble_observation, zero_bundle
from .policy import Policy, PolicyConfig, bundles_to_tensors, build_policy, save_policy
from .rewards import step_rewards
from .world import (
    ACTIVE,
    ALL_ENCIRCLED,
    TIMEOUT,
    WorldConfig,
    check_termination,
    init_episode,
    joint_action_table,
    step,
)

FULL_SCHEDULE_STEPS = 7_000_000


@dataclass
class Transition:
    """One replay record for one pursuer."""

    obs: ObservationBundle
    action: int
    reward: float
    next_obs: ObservationBundle  # unused whenever done is set
    done: bool
    pursuer_id: int
    episode_id: int


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform without-replacement sampling."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.insert_count = 0
        self._items = []
        self._cursor = 0

    def __len__(self):
        return len(self._items)

    def add(self, transition: Transition):
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity
        self.insert_count += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        if batch_size > len(self._items):
            raise ValueError(f"cannot sample {batch_size} from {len(self._items)} items")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]


@dataclass
class CurriculumStage:
    """Entity counts over a half-open [start_step, end_step) range."""

    start_step: int
    end_step: int
    pursuers: int
    evaders: int
    obstacles: int
    vortices: int


CURRICULUM_SCHEDULE = (
    CurriculumStage(0, 2_000_000, 3, 1, 0, 4),
    CurriculumStage(2_000_000, 4_000_000, 4, 1, 1, 6),
    CurriculumStage(4_000_000, 5_000_000, 7, 2, 2, 8),
    CurriculumStage(5_000_000, 6_000_000, 11, 3, 4, 8),
    CurriculumStage(6_000_000, 7_000_000, 15, 4, 6, 8),
)


def curriculum_stage_at(t: int, stages=CURRICULUM_SCHEDULE) -> CurriculumStage:
    """Stage whose step range contains t; steps beyond the schedule use the last stage."""
    if t < 0:
        raise ValueError(f"negative training step {t}")
    for stage in stages:
        if stage.start_step <= t < stage.end_step:
            return stage
    return stages[-1]


@dataclass
class TrainConfig:
    """Trainer hyperparameters; None fields resolve to documented defaults."""

    total_steps: int = 100_000
    lr: float = 5e-4
    gamma: float = 0.99
    batch_size: int = 64
    target_sync_interval: int = 1000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: Optional[int] = None  # default: 30% of total_steps
    replay_capacity: int = 100_000
    seed: int = 0
    episode_cap: int = 3000
    train_every: int = 1
    learning_starts: Optional[int] = None  # default: batch_size
    checkpoint_interval: int = 0  # 0 = final checkpoint only
    compression: float = 1.0  # stage lookup uses step * compression
    custom_stages: Optional[tuple] = None  # overrides the curriculum table

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError(f"epsilon must be in [0, 1], got {eps}")

    def resolved_epsilon_decay_steps(self) -> int:
        if self.epsilon_decay_steps is not None:
            return self.epsilon_decay_steps
        return max(1, round(0.3 * self.total_steps))

    def resolved_learning_starts(self) -> int:
        return self.batch_size if self.learning_starts is None else self.learning_starts


def epsilon_at(cfg: TrainConfig, step_index: int) -> float:
    """Linear anneal from epsilon_start to epsilon_end over the decay window."""
    fraction = min(1.0, step_index / cfg.resolved_epsilon_decay_steps())
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * fraction


def stage_for_step(cfg: TrainConfig, step_index: int) -> CurriculumStage:
    if cfg.custom_stages:
        return curriculum_stage_at(step_index, tuple(cfg.custom_stages))
    scaled = min(int(step_index * cfg.compression), FULL_SCHEDULE_STEPS)
    return curriculum_stage_at(scaled)


def quantile_huber_loss(
    z: torch.Tensor, y: torch.Tensor, taus: torch.Tensor, kappa: float = 1.0
) -> torch.Tensor:
    """Quantile-regression Huber loss.

    z holds K online quantiles per sample, y holds K' target values, taus the
    fractions matching z. Per sample: (1/K') * sum_i sum_j
    |tau_i - 1{y_j < z_i}| * huber(y_j - z_i) / kappa, then a batch mean.
    """
    residual = y.unsqueeze(1) - z.unsqueeze(2)  # (batch, K, K')
    indicator = (residual < 0.0).to(z.dtype)
    if taus.dim() == 1:
        taus = taus.unsqueeze(0)
    weight = (taus.unsqueeze(-1) - indicator).abs()
    elementwise = weight * huber(residual, kappa) / kappa
    per_sample = elementwise.sum(dim=(1, 2)) / y.shape[1]
    return per_sample.mean()


def dqn_td_loss(q_taken: torch.Tensor, y: torch.Tensor, kappa: float = 1.0) -> torch.Tensor:
    """Plain mean Huber TD error for the non-distributional variant."""
    return huber(y - q_taken, kappa).mean()


def _first_argmax(values: torch.Tensor) -> torch.Tensor:
    """Row-wise index of the first maximum (deterministic tie-break)."""
    n = values.shape[1]
    idx = torch.arange(n, device=values.device)
    is_max = values == values.max(dim=1, keepdim=True).values
    return torch.where(is_max, idx, torch.full_like(idx, n)).min(dim=1).values


def td_targets(
    rewards: torch.Tensor,
    dones: torch.Tensor,
    next_obs,
    target_policy: Policy,
    gamma: float,
    target_taus: Optional[torch.Tensor],
) -> torch.Tensor:
    """Distributional Bellman targets y_j = r + gamma * Z_target(tau'_j, a*).

    a* maximizes the target network's mean action value at the next
    observation; terminal transitions back up the reward alone. For the DQN
    variant (target_taus None) this is the scalar r + gamma * max_a Q_target.
    """
    net = target_policy.net
    with torch.no_grad():
        if target_taus is None:
            q_next = net.q_values(next_obs)
            best = q_next.max(dim=1).values
            return rewards + gamma * best * (1.0 - dones)
        rep = net.forward_variant(next_obs)
        z_next = net.action_quantiles(rep, target_taus)  # (batch, K', actions)
        a_star = _first_argmax(z_next.mean(dim=1))
        rows = torch.arange(z_next.shape[0], device=z_next.device)
        z_star = z_next[rows, :, a_star]  # (batch, K')
        return rewards.unsqueeze(1) + gamma * z_star * (1.0 - dones).unsqueeze(1)


def train_step(
    buffer: ReplayBuffer,
    policy: Policy,
    target_policy: Policy,
    store: ParamStore,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Optional[float]:
    """One gradient update from a uniformly sampled batch; None if buffer too small."""
    if len(buffer) < cfg.batch_size:
        return None
    batch = buffer.sample(cfg.batch_size, rng)
    dtype = policy.cfg.torch_dtype
    obs = bundles_to_tensors([tr.obs for tr in batch], dtype)
    next_obs = bundles_to_tensors([tr.next_obs for tr in batch], dtype)
    actions = torch.as_tensor([tr.action for tr in batch], dtype=torch.long)
    rewards = torch.as_tensor([tr.reward for tr in batch], dtype=dtype)
    dones = torch.as_tensor([float(tr.done) for tr in batch], dtype=dtype)

    if policy.cfg.variant == "dqn_avgpool":
        y = td_targets(rewards, dones, next_obs, target_policy, cfg.gamma, None)
        q = policy.net.q_values(obs)
        q_taken = q.gather(1, actions.unsqueeze(1)).squeeze(1)
        loss = dqn_td_loss(q_taken, y, policy.cfg.huber_kappa)
    else:
        taus = torch.as_tensor(
            rng.uniform(size=(cfg.batch_size, policy.cfg.quantile_samples)), dtype=dtype
        )
        target_taus = torch.as_tensor(
            rng.uniform(size=(cfg.batch_size, policy.cfg.target_quantile_samples)),
            dtype=dtype,
        )
        y = td_targets(rewards, dones, next_obs, target_policy, cfg.gamma, target_taus)
        rep = policy.net.forward_variant(obs)
        z = policy.net.action_quantiles(rep, taus)
        z_taken = z.gather(2, actions.view(-1, 1, 1).expand(-1, z.shape[1], 1)).squeeze(2)
        loss = quantile_huber_loss(z_taken, y, taus, policy.cfg.huber_kappa)

    store.zero_grad()
    loss.backward()
    adam_step(store, cfg.lr)
    return float(loss.detach())


def sync_target(target_policy: Policy, policy: Policy) -> None:
    """Hard copy of online parameters into the target network."""
    target_policy.net.load_state_dict(policy.net.state_dict())


@dataclass
class TrainingResult:
    policy: Policy
    checkpoint_path: Path
    log_path: Path
    steps: int
    episodes: int
    log_rows: list = field(repr=False, default_factory=list)


LOG_COLUMNS = ("step", "loss", "epsilon", "episode_return", "success")


def run_training(
    train_cfg: TrainConfig,
    world_cfg: WorldConfig,
    policy_cfg: PolicyConfig,
    apf_cfg: Optional[ApfConfig] = None,
    out_dir="runs",
) -> TrainingResult:
    """Full training loop: curriculum environment rollouts feeding replay and updates.

    Writes periodic/final checkpoints plus a CSV learning log with one row
    per completed episode (step, loss, epsilon, mean per-pursuer return,
    success flag). Stopping mid-episode at the step budget still logs the
    partial episode.
    """
    apf_cfg = apf_cfg or ApfConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(train_cfg.seed)
    policy = build_policy(policy_cfg, seed=train_cfg.seed)
    target = build_policy(policy_cfg, seed=train_cfg.seed)
    sync_target(target, policy)
    store = ParamStore.from_module(policy.net)
    buffer = ReplayBuffer(train_cfg.replay_capacity)
    terminal_bundle = zero_bundle(policy_cfg.evader_capacity)
    learning_starts = max(train_cfg.resolved_learning_starts(), train_cfg.batch_size)

    global_step = 0
    episode_id = 0
    last_loss = None
    log_rows = []

    while global_step < train_cfg.total_steps:
        stage = stage_for_step(train_cfg, global_step)
        wcfg = replace(
            world_cfg,
            n_pursuers=stage.pursuers,
            n_evaders=stage.evaders,
            n_obstacles=stage.obstacles,
            n_vortices=stage.vortices,
        )
        pursuer_table = joint_action_table(wcfg, "pursuer")
        episode_seed = int(rng.integers(0, 2**31 - 1))
        world = init_episode(wcfg, episode_seed)
        bundles = {
            p.id: assemble_observation(p, world, wcfg, policy_cfg.evader_capacity)
            for p in world.active_pursuers()
        }
        returns = {p.id: 0.0 for p in world.pursuers()}
        outcome = None
        epsilon = epsilon_at(train_cfg, global_step)

        for _ in range(train_cfg.episode_cap):
            epsilon = epsilon_at(train_cfg, global_step)
            ids = sorted(bundles)
            action_idx = policy.select_actions([bundles[i] for i in ids], epsilon, rng)
            pursuer_actions = {
                pid: pursuer_table[int(a)] for pid, a in zip(ids, action_idx)
            }
            evader_actions = {
                e.id: evader_action(e, world, apf_cfg, wcfg)
                for e in world.active_evaders()
            }
            new_world, events = step(world, pursuer_actions, evader_actions, wcfg)
            rewards = step_rewards(world, new_world, events, wcfg)
            outcome = check_termination(new_world, train_cfg.episode_cap)

            # Timeout is truncation, not a real terminal: the agent cannot see
            # the episode clock, so its value still bootstraps there. Own
            # collision and the hard endings back up the reward alone.
            terminal = outcome is not None and outcome != TIMEOUT
            next_bundles = {}
            for pid, a in zip(ids, action_idx):
                robot_after = new_world.robot(pid)
                done = robot_after.status != ACTIVE or terminal
                if done:
                    next_obs = terminal_bundle
                else:
                    next_obs = assemble_observation(
                        robot_after, new_world, wcfg, policy_cfg.evader_capacity
                    )
                    if outcome is None:
                        next_bundles[pid] = next_obs
                buffer.add(
                    Transition(
                        obs=bundles[pid],
                        action=int(a),
                        reward=rewards[pid].total,
                        next_obs=next_obs,
                        done=done,
                        pursuer_id=pid,
                        episode_id=episode_id,
                    )
                )
                returns[pid] += rewards[pid].total

            global_step += 1
            if global_step % train_cfg.train_every == 0 and len(buffer) >= learning_starts:
                loss = train_step(buffer, policy, target, store, train_cfg, rng)
                if loss is not None:
                    last_loss = loss
            if global_step % train_cfg.target_sync_interval == 0:
                sync_target(target, policy)
            if (
                train_cfg.checkpoint_interval
                and global_step % train_cfg.checkpoint_interval == 0
            ):
                save_policy(out_dir / f"policy_step{global_step}.ckpt", policy)

            world = new_world
            bundles = next_bundles
            if outcome is not None or global_step >= train_cfg.total_steps:
                break

        log_rows.append(
            (
                global_step,
                "" if last_loss is None else repr(last_loss),
                repr(epsilon),
                repr(sum(returns.values()) / max(len(returns), 1)),
                int(outcome == ALL_ENCIRCLED),
            )
        )
        episode_id += 1

    checkpoint_path = out_dir / "policy_final.ckpt"
    save_policy(checkpoint_path, policy)
    log_path = out_dir / "training_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        writer.writerows(log_rows)
    return TrainingResult(
        policy=policy,
        checkpoint_path=checkpoint_path,
        log_path=log_path,
        steps=global_step,
        episodes=episode_id,
        log_rows=log_rows,
    )

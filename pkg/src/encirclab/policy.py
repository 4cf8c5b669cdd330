"""Shared pursuit policy: entity-attention network with a quantile head.

The full variant runs four stages: per-kind observation embedding, masked
self-attention over the entity set (relation extraction), a cross-attention
read-out over evader rows (target selection), and an implicit-quantile action
head. Baselines and ablations swap stages behind one interface:

    terl            embedding -> relation extraction -> target selection -> IQN head
    terl_no_re      embedding -> target selection -> IQN head
    terl_no_ts      embedding -> relation extraction -> [ego || max-pool] -> IQN head
    iqn_avgpool     per-category masked average pooling, concatenated -> IQN head
    dqn_avgpool     same torso as iqn_avgpool -> plain Q head (no quantiles)
    mean_embedding  category averages averaged again into one vector -> IQN head

Action selection is strictly local: it consumes a single pursuer's
ObservationBundle and nothing else.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .netops import (
    MaskedMultiheadAttention,
    load_checkpoint,
    masked_max_pool,
    masked_mean_pool,
    masked_softmax,
    save_checkpoint,
)
from .perception import (
    DEFAULT_EVADER_CAPACITY,
    EGO_DIM,
    EVADER_DIM,
    OBSTACLE_CAPACITY,
    OBSTACLE_DIM,
    TEAM_CAPACITY,
    TEAM_DIM,
    ObservationBundle,
)

VARIANTS = (
    "terl",
    "terl_no_re",
    "terl_no_ts",
    "iqn_avgpool",
    "dqn_avgpool",
    "mean_embedding",
)

_CLI_VARIANT_ALIASES = {
    "terl": "terl",
    "terl-no-re": "terl_no_re",
    "terl-no-ts": "terl_no_ts",
    "iqn": "iqn_avgpool",
    "dqn": "dqn_avgpool",
    "mean": "mean_embedding",
}

# Type identifiers for the learned type embeddings, in entity-row order.
TYPE_EGO, TYPE_TEAM, TYPE_OBSTACLE, TYPE_EVADER = 0, 1, 2, 3

CHECKPOINT_FORMAT = "encirclab-policy"


def normalize_variant(name: str) -> str:
    """Map CLI spellings (terl-no-re, iqn, ...) onto canonical variant names."""
    key = name.strip().lower()
    if key in VARIANTS:
        return key
    if key in _CLI_VARIANT_ALIASES:
        return _CLI_VARIANT_ALIASES[key]
    raise ValueError(f"unknown policy variant {name!r}; choose from {sorted(_CLI_VARIANT_ALIASES)}")


@dataclass
class PolicyConfig:
    """Network sizes, quantile sampling counts, and the variant switch."""

    latent_dim: int = 64
    heads: int = 4
    relation_layers: int = 2
    quantile_samples: int = 8  # online tau draws per forward
    target_quantile_samples: int = 8
    eval_quantile_samples: int = 32  # deterministic mid-point grid
    quantile_embedding_size: int = 64
    variant: str = "terl"
    n_accels: int = 3
    n_turn_rates: int = 3
    team_capacity: int = TEAM_CAPACITY
    obstacle_capacity: int = OBSTACLE_CAPACITY
    evader_capacity: int = DEFAULT_EVADER_CAPACITY
    residual_attention: bool = True
    huber_kappa: float = 1.0
    dtype: str = "float32"  # float64 for gradient-check tests

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.latent_dim % self.heads != 0:
            raise ValueError("latent_dim must be divisible by heads")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def n_actions(self) -> int:
        return self.n_accels * self.n_turn_rates

    @property
    def n_entity_rows(self) -> int:
        return 1 + self.team_capacity + self.obstacle_capacity + self.evader_capacity

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass
class ObsTensors:
    """A batch of observation bundles as torch tensors."""

    ego: torch.Tensor
    team: torch.Tensor
    team_mask: torch.Tensor
    obstacles: torch.Tensor
    obstacle_mask: torch.Tensor
    evaders: torch.Tensor
    evader_mask: torch.Tensor


def bundles_to_tensors(bundles, dtype: torch.dtype) -> ObsTensors:
    def stack(attr):
        return torch.as_tensor(
            np.stack([getattr(b, attr) for b in bundles]), dtype=dtype
        )

    return ObsTensors(
        ego=stack("ego"),
        team=stack("team"),
        team_mask=stack("team_mask"),
        obstacles=stack("obstacles"),
        obstacle_mask=stack("obstacle_mask"),
        evaders=stack("evaders"),
        evader_mask=stack("evader_mask"),
    )


def _mlp(in_dim: int, out_dim: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(in_dim, out_dim), nn.ReLU(), nn.Linear(out_dim, out_dim))


class PolicyNetwork(nn.Module):
    """Variant-switched network mapping observation batches to action values."""

    def __init__(self, cfg: PolicyConfig):
        super().__init__()
        self.cfg = cfg
        f = cfg.latent_dim

        self.ego_embed = _mlp(EGO_DIM, f)
        self.team_embed = _mlp(TEAM_DIM, f)
        self.evader_embed = _mlp(EVADER_DIM, f)
        self.obstacle_embed = _mlp(OBSTACLE_DIM, f)

        uses_relation = cfg.variant in ("terl", "terl_no_ts")
        uses_target_selection = cfg.variant in ("terl", "terl_no_re")

        if uses_relation:
            self.type_embeddings = nn.Parameter(0.02 * torch.randn(4, f))
            self.relation_blocks = nn.ModuleList(
                MaskedMultiheadAttention(f, cfg.heads) for _ in range(cfg.relation_layers)
            )
        if uses_target_selection:
            self.ts_query = nn.Linear(2 * f, f)
            self.ts_key = nn.Linear(f, f)
            self.ts_value = nn.Linear(f, f)

        rep_dims = {
            "terl": 2 * f,
            "terl_no_re": 2 * f,
            "terl_no_ts": 2 * f,
            "iqn_avgpool": 4 * f,
            "dqn_avgpool": 4 * f,
            "mean_embedding": f,
        }
        self.rep_proj = nn.Linear(rep_dims[cfg.variant], f)
        if cfg.variant != "dqn_avgpool":
            self.tau_embed = nn.Linear(cfg.quantile_embedding_size, f)
        self.head = nn.Sequential(nn.Linear(f, f), nn.ReLU(), nn.Linear(f, cfg.n_actions))

        # Row layout of the entity set: [ego, teammates, obstacles, evaders].
        self._evader_rows = slice(
            1 + cfg.team_capacity + cfg.obstacle_capacity, cfg.n_entity_rows
        )
        kinds = (
            [TYPE_EGO]
            + [TYPE_TEAM] * cfg.team_capacity
            + [TYPE_OBSTACLE] * cfg.obstacle_capacity
            + [TYPE_EVADER] * cfg.evader_capacity
        )
        self.register_buffer("_row_kinds", torch.tensor(kinds), persistent=False)

    # --- pipeline stages -------------------------------------------------

    def embed_observations(self, obs: ObsTensors) -> tuple:
        """Per-kind MLP embeddings stacked into the (batch, rows, f) entity set."""
        if obs.evaders.shape[1] != self.cfg.evader_capacity:
            raise ValueError(
                f"bundle evader capacity {obs.evaders.shape[1]} != "
                f"policy capacity {self.cfg.evader_capacity}"
            )
        rows = torch.cat(
            [
                self.ego_embed(obs.ego).unsqueeze(1),
                self.team_embed(obs.team),
                self.obstacle_embed(obs.obstacles),
                self.evader_embed(obs.evaders),
            ],
            dim=1,
        )
        ones = torch.ones_like(obs.team_mask[:, :1])
        mask = torch.cat([ones, obs.team_mask, obs.obstacle_mask, obs.evader_mask], dim=1)
        return rows, mask

    def add_type_embeddings(self, entity_set: torch.Tensor) -> torch.Tensor:
        """Add the learned per-kind vector to each row (shared within a kind)."""
        return entity_set + self.type_embeddings[self._row_kinds]

    def relation_extraction(self, entity_set: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Masked self-attention stack over all rows, ego included as a key."""
        x = entity_set
        for block in self.relation_blocks:
            attended = block(x, x, mask)
            x = x + attended if self.cfg.residual_attention else attended
        return x

    def target_selection(
        self, entity_set: torch.Tensor, mask: torch.Tensor, evader_mask: torch.Tensor
    ) -> torch.Tensor:
        """[weighted evader read-out || query] where the query fuses ego and max-pool.

        Single-head scaled dot-product attention with evader rows as keys and
        values. With zero valid evaders the read-out is exactly zero and the
        query passes through.
        """
        f = self.cfg.latent_dim
        ego = entity_set[:, 0]
        pooled = masked_max_pool(entity_set, mask)
        query = self.ts_query(torch.cat([ego, pooled], dim=-1))
        evader_rows = entity_set[:, self._evader_rows]
        keys = self.ts_key(evader_rows)
        values = self.ts_value(evader_rows)
        scores = (keys @ query.unsqueeze(-1)).squeeze(-1) / math.sqrt(f)
        weights = masked_softmax(scores, evader_mask)
        read_out = (weights.unsqueeze(-1) * values).sum(dim=1)
        return torch.cat([read_out, query], dim=-1)

    def _category_means(self, entity_set: torch.Tensor, obs: ObsTensors) -> list:
        team = entity_set[:, 1 : 1 + self.cfg.team_capacity]
        obstacles = entity_set[
            :, 1 + self.cfg.team_capacity : 1 + self.cfg.team_capacity + self.cfg.obstacle_capacity
        ]
        evaders = entity_set[:, self._evader_rows]
        return [
            entity_set[:, 0],
            masked_mean_pool(team, obs.team_mask),
            masked_mean_pool(obstacles, obs.obstacle_mask),
            masked_mean_pool(evaders, obs.evader_mask),
        ]

    def forward_variant(self, obs: ObsTensors) -> torch.Tensor:
        """Variant-specific torso output fed to the action head."""
        entity_set, mask = self.embed_observations(obs)
        variant = self.cfg.variant
        if variant == "terl":
            related = self.relation_extraction(self.add_type_embeddings(entity_set), mask)
            return self.target_selection(related, mask, obs.evader_mask)
        if variant == "terl_no_re":
            return self.target_selection(entity_set, mask, obs.evader_mask)
        if variant == "terl_no_ts":
            related = self.relation_extraction(self.add_type_embeddings(entity_set), mask)
            return torch.cat([related[:, 0], masked_max_pool(related, mask)], dim=-1)
        means = self._category_means(entity_set, obs)
        if variant in ("iqn_avgpool", "dqn_avgpool"):
            return torch.cat(means, dim=-1)
        return torch.stack(means, dim=0).mean(dim=0)  # mean_embedding

    def quantile_embed(self, taus: torch.Tensor) -> torch.Tensor:
        """Cosine-basis embedding phi(tau): ReLU(W [cos(pi * i * tau)]_i + b)."""
        basis = torch.arange(
            self.cfg.quantile_embedding_size, dtype=taus.dtype, device=taus.device
        )
        angles = math.pi * taus.unsqueeze(-1) * basis
        return torch.relu(self.tau_embed(torch.cos(angles)))

    def action_quantiles(self, rep: torch.Tensor, taus: torch.Tensor) -> torch.Tensor:
        """Quantile values Z(tau, action), shape (batch, n_tau, n_actions)."""
        h = self.rep_proj(rep).unsqueeze(1)
        return self.head(h * self.quantile_embed(taus))

    def q_values(self, obs: ObsTensors, taus: torch.Tensor = None) -> torch.Tensor:
        """Mean action values; DQN ignores taus, quantile variants average over them."""
        rep = self.forward_variant(obs)
        if self.cfg.variant == "dqn_avgpool":
            return self.head(torch.relu(self.rep_proj(rep)))
        return self.action_quantiles(rep, taus).mean(dim=1)


class ActionPolicy:
    """Minimal action-selection interface shared by learned and scripted policies."""

    n_actions: int

    def select_actions(self, bundles, epsilon, rng, deterministic_taus=False):
        raise NotImplementedError

    def select_action(
        self,
        obs: ObservationBundle,
        epsilon: float,
        rng: np.random.Generator,
        deterministic_taus: bool = False,
    ) -> int:
        """Action for one pursuer from its own local observation only."""
        return int(self.select_actions([obs], epsilon, rng, deterministic_taus)[0])


class RandomPolicy(ActionPolicy):
    """Uniform-random baseline over the joint discrete action set."""

    def __init__(self, n_actions: int = 9):
        self.n_actions = n_actions

    def select_actions(self, bundles, epsilon, rng, deterministic_taus=False):
        return rng.integers(self.n_actions, size=len(bundles))


class StillPolicy(ActionPolicy):
    """Scripted do-nothing baseline: always the same fixed action index."""

    def __init__(self, action_index: int, n_actions: int = 9):
        self.action_index = action_index
        self.n_actions = n_actions

    def select_actions(self, bundles, epsilon, rng, deterministic_taus=False):
        return np.full(len(bundles), self.action_index, dtype=int)


class Policy(ActionPolicy):
    """Network-backed policy with epsilon-greedy exploration.

    Greedy actions maximize the tau-averaged action values; ties break to the
    lowest action index. Evaluation mode (deterministic_taus) uses the fixed
    mid-point quantile grid and consumes no randomness at epsilon 0.
    """

    def __init__(self, cfg: PolicyConfig, net: PolicyNetwork):
        self.cfg = cfg
        self.net = net
        self.n_actions = cfg.n_actions

    def eval_taus(self, batch: int) -> torch.Tensor:
        n = self.cfg.eval_quantile_samples
        grid = (torch.arange(n, dtype=self.cfg.torch_dtype) + 0.5) / n
        return grid.unsqueeze(0).expand(batch, n)

    def greedy_actions(self, bundles, taus: torch.Tensor = None) -> np.ndarray:
        obs = bundles_to_tensors(bundles, self.cfg.torch_dtype)
        with torch.no_grad():
            if self.cfg.variant == "dqn_avgpool":
                q = self.net.q_values(obs)
            else:
                q = self.net.q_values(obs, taus if taus is not None else self.eval_taus(len(bundles)))
        return np.argmax(q.numpy(), axis=1)

    def select_actions(self, bundles, epsilon, rng, deterministic_taus=False):
        batch = len(bundles)
        explore = None
        random_actions = None
        if epsilon > 0.0:
            explore = rng.uniform(size=batch) < epsilon
            random_actions = rng.integers(self.n_actions, size=batch)
        if deterministic_taus or self.cfg.variant == "dqn_avgpool":
            taus = None  # mid-point grid / no quantiles
        else:
            taus = torch.as_tensor(
                rng.uniform(size=(batch, self.cfg.quantile_samples)),
                dtype=self.cfg.torch_dtype,
            )
        actions = self.greedy_actions(bundles, taus)
        if explore is not None:
            actions = np.where(explore, random_actions, actions)
        return actions


def build_policy(cfg: PolicyConfig, seed: int = 0) -> Policy:
    """Construct a freshly initialized policy, reproducible from the seed."""
    torch.manual_seed(seed)
    net = PolicyNetwork(cfg).to(cfg.torch_dtype)
    return Policy(cfg, net)


def save_policy(path, policy: Policy) -> None:
    """Write config header plus all named parameters (float32 payloads)."""
    header = {"format": CHECKPOINT_FORMAT, "config": asdict(policy.cfg)}
    save_checkpoint(path, header, list(policy.net.named_parameters()))


def load_policy(path, expected_variant: str = None) -> Policy:
    """Load a checkpoint, validating format and (optionally) the variant name."""
    header, arrays = load_checkpoint(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a policy checkpoint")
    cfg = PolicyConfig(**header["config"])
    if expected_variant is not None and cfg.variant != normalize_variant(expected_variant):
        raise ValueError(
            f"checkpoint variant {cfg.variant!r} does not match requested "
            f"{expected_variant!r}"
        )
    net = PolicyNetwork(cfg).to(cfg.torch_dtype)
    named = dict(net.named_parameters())
    if set(named) != set(arrays):
        missing = sorted(set(named) ^ set(arrays))
        raise ValueError(f"{path}: parameter names do not match network: {missing}")
    with torch.no_grad():
        for name, array in arrays.items():
            if tuple(named[name].shape) != array.shape:
                raise ValueError(f"{path}: shape mismatch for {name}")
            named[name].copy_(torch.from_numpy(array).to(cfg.torch_dtype))
    return Policy(cfg, net)

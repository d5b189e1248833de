"""Bootstrapped DQN decision agent and its action vocabulary.

The agent picks one high-level action every decision interval.  Keeping
actions pair a target-speed adjustment (+2, 0, -2 m/s) with a keeping-MPC
weight preset; changing actions pick a changing-MPC preset (the maneuver
direction is resolved downstream from traffic context).  The full catalog has
12 actions; the reduced catalog used by the non-integrated baselines keeps
the mid presets only, leaving 4.

Exploration follows the bootstrapped scheme: K value heads on a shared trunk,
one head sampled per episode to drive behavior, Bernoulli masks deciding
which heads train on which transitions.  Deployment aggregates heads by
majority vote.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .config import AgentConfig
from .network import Adam, BootstrappedMlp, MlpTopology, load_network, save_network

SPEED_STEP = 2.0   # m/s target adjustment for accelerate / decelerate actions


@dataclass(frozen=True)
class ActionSpec:
    kind: str           # "keep" or "change"
    speed_delta: float  # target-speed adjustment, zero for lane changes
    preset: int         # MPC weight preset level


def _keep(delta: float, preset: int) -> ActionSpec:
    return ActionSpec("keep", delta, preset)


FULL_CATALOG: tuple[ActionSpec, ...] = tuple(
    [_keep(delta, preset)
     for delta in (SPEED_STEP, 0.0, -SPEED_STEP) for preset in range(3)]
    + [ActionSpec("change", 0.0, preset) for preset in range(3)]
)

REDUCED_CATALOG: tuple[ActionSpec, ...] = (
    _keep(SPEED_STEP, 1), _keep(0.0, 1), _keep(-SPEED_STEP, 1),
    ActionSpec("change", 0.0, 1),
)


def epsilon_schedule(episode: int, config: AgentConfig) -> float:
    """Linear decay from epsilon_start over the first epsilon_fraction of
    training, flat at epsilon_end afterwards."""
    ramp = config.epsilon_fraction * config.episodes
    frac = episode / ramp if ramp > 0 else 1.0
    value = config.epsilon_start \
        - (config.epsilon_start - config.epsilon_end) * frac
    return max(config.epsilon_end, value)


class Batch(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray
    discounts: np.ndarray
    masks: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions with per-head bootstrap masks."""

    def __init__(self, capacity: int, obs_dim: int, head_count: int) -> None:
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.discounts = np.zeros(capacity)
        self.masks = np.zeros((capacity, head_count))
        self.size = 0
        self.cursor = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs, action, reward, next_obs, terminal, discount,
             mask) -> None:
        i = self.cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminals[i] = terminal
        self.discounts[i] = discount
        self.masks[i] = mask
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx],
                     self.next_obs[idx], self.terminals[idx],
                     self.discounts[idx], self.masks[idx])


def td_targets(rewards: np.ndarray, discounts: np.ndarray,
               terminals: np.ndarray, q_next_target: np.ndarray,
               q_next_online: np.ndarray | None = None) -> np.ndarray:
    """Per-head regression targets, shape (K, B).

    Each head bootstraps from its own target head.  With ``q_next_online``
    given, the action is chosen by the online head and evaluated by the
    target head (double estimation); otherwise the target head does both.
    ``discounts`` carries the per-transition effective discount, which for
    multi-step maneuvers is gamma raised to the maneuver length.
    """
    if q_next_online is None:
        best = q_next_target.max(axis=2)                      # (K, B)
    else:
        pick = q_next_online.argmax(axis=2)                   # (K, B)
        best = np.take_along_axis(q_next_target, pick[:, :, None],
                                  axis=2)[:, :, 0]
    cont = np.where(terminals, 0.0, discounts)
    return rewards + cont * best


def vote(q_values: np.ndarray) -> int:
    """Majority vote over per-head greedy actions.

    Ties on vote count fall back to the summed Q-value across heads, then to
    the lowest action index.  ``q_values`` has shape (K, A).
    """
    k, n_actions = q_values.shape
    votes = np.bincount(q_values.argmax(axis=1), minlength=n_actions)
    leaders = np.flatnonzero(votes == votes.max())
    if len(leaders) == 1:
        return int(leaders[0])
    summed = q_values.sum(axis=0)[leaders]
    return int(leaders[np.argmax(summed)])


class BootstrappedAgent:
    """Multi-head Q-learner over a fixed action catalog."""

    def __init__(self, obs_dim: int, action_count: int, config: AgentConfig,
                 seed: int) -> None:
        self.config = config
        self.obs_dim = obs_dim
        self.action_count = action_count
        net_seed, rng_seed = np.random.SeedSequence(seed).spawn(2)
        topology = MlpTopology(
            input_dim=obs_dim, shared_layers=config.shared_layers,
            head_layers=config.head_layers, output_dim=action_count,
            head_count=config.head_count)
        self.online = BootstrappedMlp(topology,
                                      seed=net_seed.generate_state(1)[0])
        self.target = self.online.clone()
        self.optimizer = Adam(self.online.parameters(),
                              learning_rate=config.learning_rate)
        self.replay = ReplayBuffer(config.buffer_capacity, obs_dim,
                                   config.head_count)
        self.rng = np.random.default_rng(rng_seed)
        self.train_steps = 0

    # -- acting ------------------------------------------------------------------

    def q_values(self, obs: np.ndarray) -> np.ndarray:
        """Per-head action values for one observation, shape (K, A)."""
        return self.online.forward(obs)[:, 0, :]

    def sample_head(self) -> int:
        return int(self.rng.integers(self.config.head_count))

    def act_training(self, obs: np.ndarray, head: int,
                     epsilon: float) -> int:
        if self.rng.random() < epsilon:
            return int(self.rng.integers(self.action_count))
        return int(np.argmax(self.q_values(obs)[head]))

    def act_greedy(self, obs: np.ndarray) -> int:
        return vote(self.q_values(obs))

    # -- learning ----------------------------------------------------------------

    def store(self, obs, action, reward, next_obs, terminal, discount,
              mask: np.ndarray | None = None) -> None:
        if mask is None:
            mask = (self.rng.random(self.config.head_count)
                    < self.config.mask_prob).astype(float)
        self.replay.push(obs, action, reward, next_obs, terminal, discount,
                         mask)

    def train_step(self) -> float | None:
        if len(self.replay) < self.config.batch_size:
            return None
        batch = self.replay.sample(self.config.batch_size, self.rng)
        q_next_target = self.target.forward(batch.next_obs)
        q_next_online = self.online.forward(batch.next_obs) \
            if self.config.double_q else None
        targets = td_targets(batch.rewards, batch.discounts, batch.terminals,
                             q_next_target, q_next_online)
        loss, grads = self.online.loss_and_gradients(
            batch.obs, batch.actions, targets, batch.masks)
        self.optimizer.step(grads)
        self.train_steps += 1
        if self.train_steps % self.config.target_sync_period == 0:
            self.target.set_parameters(self.online.parameters())
        return loss

    # -- persistence -------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        save_network(path, self.online, extra_meta={
            "action_count": self.action_count,
            "train_steps": self.train_steps,
        })

    def load_weights(self, path: str | Path) -> None:
        net, extra = load_network(path)
        if net.topology != self.online.topology:
            raise ValueError("checkpoint topology mismatch")
        self.online.set_parameters(net.parameters())
        self.target.set_parameters(net.parameters())
        self.train_steps = int(extra.get("train_steps", 0))

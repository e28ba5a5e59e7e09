"""Deep Q-learning over the composite encoder + Q-network model.

One environment step is followed by at most one gradient step.  The replay
buffer stores normalized observations and raw rewards (bits/s); rewards are
multiplied by ``TrainConfig.reward_scale`` when Bellman targets are formed so
Q-values stay near unit scale.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baseline import random_policy
from .env import ConfigError, EnvConfig, V2XEnv, normalize_observation
from .nn import RMSProp, huber
from .policy import ENCODER_HIDDEN, QNET_HIDDEN, CompositeNet, greedy_action

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    mode: str = "real"
    n_feedback: int = 3
    n_bits: int = 36                     # binary bits per link
    gamma: float = 0.05
    learning_rate: float = 1e-3
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-7
    huber_delta: float = 1.0
    batch_size: int = 512
    target_sync_every: int = 500
    steps_per_episode: int = 1000
    episodes: int = 2000
    buffer_capacity: int = 1_000_000
    epsilon_start: float = 1.0
    epsilon_end: float = 0.02
    epsilon_decay_fraction: float = 0.8
    warmup: int | None = None            # None -> batch_size
    reward_scale: float = 1e-7           # bits/s -> training units
    encoder_hidden: tuple = ENCODER_HIDDEN
    qnet_hidden: tuple = QNET_HIDDEN

    def __post_init__(self):
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.qnet_hidden = tuple(self.qnet_hidden)
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 1 <= self.batch_size <= self.buffer_capacity:
            raise ConfigError("batch size must be in [1, buffer capacity]")
        if self.target_sync_every < 1:
            raise ConfigError("target_sync_every must be >= 1")

    @property
    def warmup_steps(self) -> int:
        return self.batch_size if self.warmup is None else self.warmup

    @classmethod
    def from_dict(cls, data: dict | None) -> "TrainConfig":
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["qnet_hidden"] = list(self.qnet_hidden)
        return d


@dataclass
class Batch:
    obs: np.ndarray        # (B, K, 2N+1) normalized
    actions: np.ndarray    # (B,)
    rewards: np.ndarray    # (B,) bits/s
    next_obs: np.ndarray


class ReplayBuffer:
    """FIFO ring buffer; storage grows geometrically up to ``capacity``."""

    def __init__(self, capacity: int, obs_shape: tuple[int, ...]):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        n = min(capacity, 1024)
        self._obs = np.empty((n, *obs_shape))
        self._next_obs = np.empty((n, *obs_shape))
        self._actions = np.empty(n, dtype=np.int64)
        self._rewards = np.empty(n)
        self._cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def _grow(self):
        n = min(2 * len(self._rewards), self.capacity)
        for name in ("_obs", "_next_obs", "_actions", "_rewards"):
            old = getattr(self, name)
            new = np.empty((n, *old.shape[1:]), dtype=old.dtype)
            new[: len(old)] = old
            setattr(self, name, new)

    def add(self, obs, action: int, reward: float, next_obs) -> None:
        if self.size < self.capacity and self.size == len(self._rewards):
            self._grow()
        i = self._cursor
        self._obs[i] = obs
        self._next_obs[i] = next_obs
        self._actions[i] = action
        self._rewards[i] = reward
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sampling with replacement."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(self.size, size=batch_size)
        return Batch(self._obs[idx], self._actions[idx], self._rewards[idx], self._next_obs[idx])

    def ordered(self) -> Batch:
        """Stored transitions, oldest first."""
        if self.size < self.capacity:
            idx = np.arange(self.size)
        else:
            idx = (np.arange(self.size) + self._cursor) % self.capacity
        return Batch(self._obs[idx], self._actions[idx], self._rewards[idx], self._next_obs[idx])


def bellman_targets(batch: Batch, composite: CompositeNet, gamma: float,
                    reward_scale: float = 1.0) -> np.ndarray:
    """y = scaled reward + gamma * max_a' Q_target(o', a'); no terminal cutoff."""
    y = reward_scale * np.asarray(batch.rewards, dtype=np.float64)
    if gamma == 0:
        return y
    q_next = composite.q_values(batch.next_obs, target=True)
    return y + gamma * q_next.max(axis=1)


def td_loss(composite: CompositeNet, batch: Batch, targets: np.ndarray, delta: float = 1.0):
    """Mean Huber loss of Q(o, a) against fixed targets and its parameter gradients."""
    q, cache = composite.forward(batch.obs)
    rows = np.arange(len(targets))
    loss, g = huber(q[rows, batch.actions], targets, delta)
    grad_q = np.zeros_like(q)
    grad_q[rows, batch.actions] = g / len(targets)
    return float(loss.mean()), composite.backward(cache, grad_q)


def train_step(composite: CompositeNet, optimizer: RMSProp, batch: Batch, gamma: float,
               delta: float = 1.0, reward_scale: float = 1.0) -> float:
    """One RMSProp step on the batch; the target networks are left untouched."""
    targets = bellman_targets(batch, composite, gamma, reward_scale)
    loss, grads = td_loss(composite, batch, targets, delta)
    optimizer.step(grads)
    return loss


def epsilon_greedy(composite: CompositeNet, observations, epsilon: float,
                   rng: np.random.Generator) -> int:
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    explore = rng.random() < epsilon
    if explore or composite.mode == "none":
        return random_policy(rng, composite.n_links, composite.n_channels)
    return greedy_action(composite, observations)


def epsilon_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    horizon = cfg.epsilon_decay_fraction * total_steps
    if horizon <= 0 or step >= horizon:
        return cfg.epsilon_end
    frac = step / horizon
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


@dataclass
class TrainResult:
    composite: CompositeNet
    returns: list[float] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)   # per-episode mean; nan before warmup


def make_composite(env_cfg: EnvConfig, cfg: TrainConfig, rng) -> CompositeNet:
    return CompositeNet(env_cfg.n_links, env_cfg.n_channels, cfg.mode, cfg.n_feedback, cfg.n_bits,
                        rng=rng, encoder_hidden=cfg.encoder_hidden, qnet_hidden=cfg.qnet_hidden)


def write_returns_csv(path, result: TrainResult) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "epsilon", "loss_mean"])
        for i, (r, e, l) in enumerate(zip(result.returns, result.epsilons, result.losses)):
            w.writerow([i, repr(r), repr(e), repr(l)])


def run_training(env_cfg: EnvConfig, cfg: TrainConfig, seed: int = 0, learn: bool = True,
                 epsilon_override: float | None = None, checkpoint_dir=None,
                 checkpoint_every: int | None = None, returns_csv=None,
                 progress=None) -> TrainResult:
    """Train the composite model for ``cfg.episodes`` episodes of ``cfg.steps_per_episode`` steps.

    Each episode re-drops the vehicles; learned parameters carry over.
    """
    init_ss, env_ss, act_ss, replay_ss = np.random.SeedSequence(seed).spawn(4)
    composite = make_composite(env_cfg, cfg, np.random.default_rng(init_ss))
    act_rng = np.random.default_rng(act_ss)
    replay_rng = np.random.default_rng(replay_ss)
    env = V2XEnv(env_cfg, np.random.default_rng(env_ss))
    result = TrainResult(composite)
    learn = learn and composite.mode != "none"
    optimizer = None
    if learn:
        optimizer = RMSProp(composite.parameters(), cfg.learning_rate,
                            cfg.rmsprop_decay, cfg.rmsprop_epsilon)
    buffer = ReplayBuffer(cfg.buffer_capacity, (env_cfg.n_links, env_cfg.obs_dim))
    total_steps = cfg.episodes * cfg.steps_per_episode
    step = 0
    for episode in range(cfg.episodes):
        obs = normalize_observation(env.reset())
        ep_return, losses = 0.0, []
        eps = epsilon_at(step, total_steps, cfg) if epsilon_override is None else epsilon_override
        for _ in range(cfg.steps_per_episode):
            eps = epsilon_at(step, total_steps, cfg) if epsilon_override is None else epsilon_override
            action = epsilon_greedy(composite, obs, eps, act_rng)
            out = env.step_action(action)
            next_obs = normalize_observation(out.observations)
            buffer.add(obs, action, out.reward, next_obs)
            ep_return += out.reward
            if learn and len(buffer) >= max(cfg.warmup_steps, 1):
                batch = buffer.sample(cfg.batch_size, replay_rng)
                losses.append(train_step(composite, optimizer, batch, cfg.gamma,
                                         cfg.huber_delta, cfg.reward_scale))
            step += 1
            if step % cfg.target_sync_every == 0:
                composite.sync_target()
            obs = next_obs
        result.returns.append(ep_return)
        result.epsilons.append(eps)
        result.losses.append(float(np.mean(losses)) if losses else float("nan"))
        if checkpoint_dir is not None and checkpoint_every and (episode + 1) % checkpoint_every == 0:
            composite.save(Path(checkpoint_dir) / f"episode_{episode + 1:05d}")
        if progress is not None:
            progress(episode, result)
        log.debug("episode %d return %.4g eps %.3f loss %.4g", episode, ep_return, eps,
                  result.losses[-1])
    if returns_csv is not None:
        write_returns_csv(returns_csv, result)
    return result

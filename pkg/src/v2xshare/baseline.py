"""Exhaustive optimal allocation and the uniform random policy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import ChannelRealization, EnvConfig, sum_rates_for_channels

MAX_ENUMERATION = 10 ** 6
_CHUNK = 1 << 15


class ActionSpaceTooLarge(RuntimeError):
    pass


@dataclass
class OracleResult:
    best_action: int
    best_reward: float
    reward_table: np.ndarray | None = None


def brute_force(realization: ChannelRealization, config: EnvConfig,
                keep_table: bool = False) -> OracleResult:
    """Best joint allocation for a fixed channel realization."""
    K, N = config.n_links, config.n_channels
    n_actions = N ** K
    if n_actions > MAX_ENUMERATION:
        raise ActionSpaceTooLarge(f"{N}^{K} = {n_actions} joint actions exceeds {MAX_ENUMERATION}")
    digits = N ** np.arange(K)
    table = np.empty(n_actions)
    for start in range(0, n_actions, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, n_actions))
        channels = (idx[:, None] // digits) % N
        table[start:start + len(idx)] = sum_rates_for_channels(channels, realization, config)
    best = int(np.argmax(table))
    return OracleResult(best, float(table[best]), table if keep_table else None)


def random_policy(rng: np.random.Generator, n_links: int, n_channels: int) -> int:
    """Every pair picks a channel uniformly and independently."""
    channels = rng.integers(n_channels, size=n_links)
    return int(np.dot(channels, n_channels ** np.arange(n_links)))

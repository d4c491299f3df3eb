"""Hindsight relabeling with the ``future`` strategy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RelabelConfig:
    strategy: str = "future"
    replay_k: float = 4.0

    def __post_init__(self):
        if self.strategy != "future":
            raise ValueError(f"unsupported relabel strategy {self.strategy!r}")
        if self.replay_k < 0:
            raise ValueError("replay_k must be non-negative")

    @property
    def future_p(self):
        return self.replay_k / (self.replay_k + 1.0)


def relabel(batch, config, goal_space, rng, forced_t=None):
    """Return a relabeled copy of ``batch``.

    Each transition is selected with probability ``replay_k / (replay_k + 1)``;
    a selected transition at step ``t`` gets the achieved goal of a uniformly
    drawn later index ``t' in (t, T]`` of its own episode as its desired goal,
    and its reward is recomputed from the next achieved goal. ``forced_t``
    pins ``t'`` for the selected items (testing hook).
    """
    out = batch.copy()
    n = len(out)
    if n == 0 or config.replay_k == 0:
        return out
    T = out.episode_achieved_goals.shape[1] - 1
    selected = rng.random(n) < config.future_p
    # index T is always a strictly later achieved goal, so every t < T has a future
    selected &= out.t < T
    idx = np.flatnonzero(selected)
    if not len(idx):
        return out
    if forced_t is None:
        # uniform integer in [t+1, T]
        span = T - out.t[idx]
        future = out.t[idx] + 1 + np.floor(rng.random(len(idx)) * span).astype(np.int64)
    else:
        future = np.broadcast_to(np.asarray(forced_t, dtype=np.int64), idx.shape).copy()
        if np.any(future <= out.t[idx]) or np.any(future > T):
            raise ValueError("forced future index must lie in (t, T]")
    out.desired_goals[idx] = out.episode_achieved_goals[idx, future]
    out.rewards[idx] = goal_space.reward(out.next_achieved_goals[idx], out.desired_goals[idx])
    out.relabel_t[idx] = future
    return out

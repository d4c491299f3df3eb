"""Trajectory storage: the agent buffer, the FIFO expert buffer, and batch sampling."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvariantViolation

log = logging.getLogger(__name__)

SOURCES = ("demo_seed", "self_admitted", "agent")
DEFAULT_AGENT_CAPACITY = 10_000
EXPERT_CAPACITY_FACTOR = 20


@dataclass(frozen=True)
class GoalPair:
    g_init: np.ndarray
    g_d: np.ndarray


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, state_dim)
    actions: np.ndarray  # (T, action_dim)
    achieved_goals: np.ndarray  # (T+1, goal_dim)
    desired_goal: np.ndarray  # (goal_dim,)
    rewards: np.ndarray  # (T,)
    source: str = "agent"
    episode_return: float = field(init=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.achieved_goals = np.asarray(self.achieved_goals, dtype=np.float64)
        self.desired_goal = np.asarray(self.desired_goal, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.episode_return = float(self.rewards.sum())

    @property
    def horizon(self):
        return len(self.rewards)

    @property
    def goal_pair(self):
        return GoalPair(self.achieved_goals[0], self.desired_goal)

    @property
    def succeeded(self):
        """True when the goal was inside tolerance at any step."""
        return bool(np.any(self.rewards == 0.0))

    @property
    def final_success(self):
        return bool(self.rewards[-1] == 0.0)

    @property
    def hold_fraction(self):
        return float(np.mean(self.rewards == 0.0))

    def with_source(self, source):
        return replace(self, source=source)

    def validate(self, spec):
        """Raise ``ValueError`` unless shapes, values and rewards are consistent with ``spec``."""
        T = spec.horizon
        expect = {
            "states": (T + 1, spec.state_dim),
            "actions": (T, spec.action_dim),
            "achieved_goals": (T + 1, spec.goal_dim),
            "desired_goal": (spec.goal_dim,),
            "rewards": (T,),
        }
        for name, shape in expect.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if self.source not in SOURCES:
            raise ValueError(f"unknown trajectory source {self.source!r}")
        expected = spec.goal_space.reward(self.achieved_goals[1:], self.desired_goal)
        if not np.array_equal(expected, self.rewards):
            bad = int(np.flatnonzero(expected != self.rewards)[0])
            raise ValueError(f"reward at step {bad} disagrees with the goal tolerance rule")
        if self.episode_return != float(self.rewards.sum()):
            raise ValueError("cached episode return is stale")

    def equals(self, other):
        return (
            self.source == other.source
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("states", "actions", "achieved_goals", "desired_goal", "rewards")
            )
        )


@dataclass
class TransitionBatch:
    """Sampled transitions plus the episode context HER needs."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    achieved_goals: np.ndarray
    next_achieved_goals: np.ndarray
    desired_goals: np.ndarray
    rewards: np.ndarray
    is_expert: np.ndarray
    t: np.ndarray
    episode_achieved_goals: np.ndarray  # (B, T+1, goal_dim)
    relabel_t: np.ndarray  # achieved-goal index used as substitute goal, -1 if none

    def __len__(self):
        return len(self.rewards)

    def copy(self):
        return TransitionBatch(**{k: v.copy() for k, v in self.__dict__.items()})

    @staticmethod
    def concatenate(batches):
        batches = [b for b in batches if len(b)]
        keys = TransitionBatch.__dataclass_fields__.keys()
        return TransitionBatch(**{k: np.concatenate([getattr(b, k) for b in batches]) for k in keys})


class TrajectoryBuffer:
    """Fixed-capacity trajectory store; a full buffer overwrites its oldest entry."""

    is_expert = False

    def __init__(self, spec, capacity):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.spec = spec
        self.capacity = int(capacity)
        T = spec.horizon
        self.states = np.zeros((self.capacity, T + 1, spec.state_dim))
        self.actions = np.zeros((self.capacity, T, spec.action_dim))
        self.achieved_goals = np.zeros((self.capacity, T + 1, spec.goal_dim))
        self.desired_goals = np.zeros((self.capacity, spec.goal_dim))
        self.rewards = np.zeros((self.capacity, T))
        self.returns = np.zeros(self.capacity)
        self.sources = np.full(self.capacity, "", dtype=object)
        self.insert_ids = np.full(self.capacity, -1, dtype=np.int64)
        self._next = 0
        self._size = 0
        self._counter = 0

    def __len__(self):
        return self._size

    @property
    def n_transitions(self):
        return self._size * self.spec.horizon

    def push(self, traj):
        traj.validate(self.spec)
        slot = self._next
        self.states[slot] = traj.states
        self.actions[slot] = traj.actions
        self.achieved_goals[slot] = traj.achieved_goals
        self.desired_goals[slot] = traj.desired_goal
        self.rewards[slot] = traj.rewards
        self.returns[slot] = traj.episode_return
        self.sources[slot] = traj.source
        self.insert_ids[slot] = self._counter
        self._counter += 1
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        if self.returns[slot] != self.rewards[slot].sum():
            raise InvariantViolation("stored return disagrees with stored rewards")
        return slot

    def extend(self, trajs):
        for traj in trajs:
            self.push(traj)

    def order(self):
        """Occupied slots, oldest first."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return np.roll(np.arange(self.capacity), -self._next)

    def get(self, slot):
        if not 0 <= slot < self._size:
            raise IndexError(slot)
        return Trajectory(
            self.states[slot].copy(),
            self.actions[slot].copy(),
            self.achieved_goals[slot].copy(),
            self.desired_goals[slot].copy(),
            self.rewards[slot].copy(),
            source=self.sources[slot],
        )

    def trajectories(self):
        return [self.get(int(s)) for s in self.order()]

    def goal_pairs(self):
        """``(slots, g_init, g_d)`` for every stored trajectory, oldest first."""
        slots = self.order()
        return slots, self.achieved_goals[slots, 0], self.desired_goals[slots]

    def mean_goal_pair_distance(self):
        if not self._size:
            return float("nan")
        _, g_init, g_d = self.goal_pairs()
        return float(np.mean(self.spec.goal_space.distance(g_init, g_d)))

    def fingerprint(self):
        """Digest of contents in insertion order."""
        h = hashlib.sha256()
        slots = self.order()
        for arr in (self.states, self.actions, self.achieved_goals, self.desired_goals, self.rewards):
            h.update(np.ascontiguousarray(arr[slots]).tobytes())
        h.update("|".join(self.sources[slots]).encode())
        return h.hexdigest()

    def sample(self, n, rng):
        """Uniform over (trajectory, timestep) pairs."""
        if n and not self._size:
            raise ValueError(f"cannot sample {n} transitions from an empty {type(self).__name__}")
        T = self.spec.horizon
        ep = rng.integers(0, self._size, size=n)
        t = rng.integers(0, T, size=n)
        return TransitionBatch(
            states=self.states[ep, t],
            actions=self.actions[ep, t],
            next_states=self.states[ep, t + 1],
            achieved_goals=self.achieved_goals[ep, t],
            next_achieved_goals=self.achieved_goals[ep, t + 1],
            desired_goals=self.desired_goals[ep],
            rewards=self.rewards[ep, t],
            is_expert=np.full(n, self.is_expert),
            t=t,
            episode_achieved_goals=self.achieved_goals[ep],
            relabel_t=np.full(n, -1, dtype=np.int64),
        )

    def state_arrays(self, prefix):
        slots = self.order()
        return {
            f"{prefix}states": self.states[slots],
            f"{prefix}actions": self.actions[slots],
            f"{prefix}achieved_goals": self.achieved_goals[slots],
            f"{prefix}desired_goals": self.desired_goals[slots],
            f"{prefix}rewards": self.rewards[slots],
            f"{prefix}sources": np.array([str(s) for s in self.sources[slots]]),
            f"{prefix}counter": np.array(self._counter),
        }

    def load_arrays(self, arrays, prefix):
        n = len(arrays[f"{prefix}rewards"])
        self._next = self._size = 0
        for i in range(n):
            self.push(
                Trajectory(
                    arrays[f"{prefix}states"][i],
                    arrays[f"{prefix}actions"][i],
                    arrays[f"{prefix}achieved_goals"][i],
                    arrays[f"{prefix}desired_goals"][i],
                    arrays[f"{prefix}rewards"][i],
                    source=str(arrays[f"{prefix}sources"][i]),
                )
            )
        # insertion ids continue from where the saved buffer left off
        counter = int(arrays[f"{prefix}counter"])
        self.insert_ids[self.order()] = np.arange(counter - n, counter)
        self._counter = counter


class AgentBuffer(TrajectoryBuffer):
    """Self-generated, non-expert trajectories (ring buffer)."""

    def __init__(self, spec, capacity=DEFAULT_AGENT_CAPACITY):
        super().__init__(spec, capacity)


class ExpertBuffer(TrajectoryBuffer):
    """Demonstrations plus admitted self-generated trajectories, FIFO-capped."""

    is_expert = True

    @classmethod
    def for_demos(cls, spec, demos, factor=EXPERT_CAPACITY_FACTOR):
        demos = list(demos)
        if not demos:
            raise ValueError("expert buffer needs at least one demonstration")
        buf = cls(spec, factor * len(demos))
        buf.extend(t.with_source("demo_seed") for t in demos)
        return buf


def union_ratio(agent_buffer, expert_buffer):
    """Expert share implied by uniform sampling over both buffers."""
    n_e = 0 if expert_buffer is None else expert_buffer.n_transitions
    n_b = 0 if agent_buffer is None else agent_buffer.n_transitions
    if n_e + n_b == 0:
        raise ValueError("both buffers are empty")
    return n_e / (n_e + n_b)


def sample_transitions(agent_buffer, expert_buffer, batch_size, demo_ratio, rng):
    """Sample ``floor(demo_ratio * batch_size)`` expert transitions and the rest from the agent buffer.

    ``demo_ratio=None`` means uniform sampling over the union of both buffers.
    """
    if demo_ratio is None:
        demo_ratio = union_ratio(agent_buffer, expert_buffer)
    if not 0.0 <= demo_ratio <= 1.0:
        raise ValueError(f"demo_ratio must be in [0, 1], got {demo_ratio}")
    n_expert = int(np.floor(demo_ratio * batch_size))
    n_agent = batch_size - n_expert
    parts = []
    if n_expert:
        if expert_buffer is None or not len(expert_buffer):
            raise ValueError("expert share requested but the expert buffer is empty")
        parts.append(expert_buffer.sample(n_expert, rng))
    if n_agent:
        if agent_buffer is None or not len(agent_buffer):
            raise ValueError("agent share requested but the agent buffer is empty")
        parts.append(agent_buffer.sample(n_agent, rng))
    return TransitionBatch.concatenate(parts)

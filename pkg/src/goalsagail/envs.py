"""Multi-goal environments with sparse rewards.

Three deterministic desk-scale tasks share one contract: ``reset(rng)``
returns ``(state, initial_achieved_goal, desired_goal)``, ``step(action)``
returns an :class:`EnvStep`, every episode lasts exactly ``horizon`` steps and
the reward is 0 inside the goal tolerance and -1 outside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EpisodeFinished


def wrap_angle(x):
    """Map angles into [-pi, pi)."""
    return np.mod(np.asarray(x, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class GoalSpace:
    dimension: int
    metric: str = "euclidean"
    tolerance: float = 0.05

    def __post_init__(self):
        if self.metric not in ("euclidean", "angular"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.metric == "angular" and self.dimension != 1:
            raise ValueError("angular goal spaces are one-dimensional")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")

    def distance(self, g_a, g_b):
        """Distance over the last axis; broadcasts over leading axes."""
        g_a = np.asarray(g_a, dtype=np.float64)
        g_b = np.asarray(g_b, dtype=np.float64)
        if g_a.shape[-1:] != (self.dimension,) or g_b.shape[-1:] != (self.dimension,):
            raise ValueError(
                f"goals must have {self.dimension} components, got {g_a.shape} and {g_b.shape}"
            )
        if self.metric == "euclidean":
            return np.linalg.norm(g_a - g_b, axis=-1)
        return np.abs(wrap_angle(g_a - g_b))[..., 0]

    def reward(self, achieved, desired):
        d = self.distance(achieved, desired)
        return -(d >= self.tolerance).astype(np.float64)

    def is_success(self, achieved, desired):
        return self.distance(achieved, desired) < self.tolerance


def goal_distance(space, g_a, g_b):
    return space.distance(g_a, g_b)


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    state_dim: int
    action_dim: int
    goal_dim: int
    goal_feature_dim: int
    horizon: int
    action_low: tuple
    action_high: tuple
    goal_space: GoalSpace
    # largest goal-pair distance the goal sampler can produce
    max_goal_distance: float

    def to_dict(self):
        return {
            "env_id": self.env_id,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "goal_dim": self.goal_dim,
            "horizon": self.horizon,
            "tolerance": self.goal_space.tolerance,
            "metric": self.goal_space.metric,
        }


@dataclass
class EnvStep:
    next_state: np.ndarray
    achieved_goal: np.ndarray
    reward: float
    done: bool


class MultiGoalEnv:
    """Base class: subclasses provide ``spec``, ``_sample``, ``_dynamics`` and ``achieved_goal``."""

    spec: EnvSpec

    def __init__(self):
        self._state = None
        self._goal = None
        self._t = 0

    @property
    def goal_space(self):
        return self.spec.goal_space

    @property
    def t(self):
        return self._t

    @property
    def state(self):
        return None if self._state is None else self._state.copy()

    @property
    def desired_goal(self):
        return None if self._goal is None else self._goal.copy()

    def reset(self, rng):
        state, goal = self._sample(rng)
        self._state = np.asarray(state, dtype=np.float64)
        self._goal = np.asarray(goal, dtype=np.float64)
        self._t = 0
        return self._state.copy(), self.achieved_goal(self._state), self._goal.copy()

    def clip_action(self, action):
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        return np.clip(action, self.spec.action_low, self.spec.action_high)

    def step(self, action):
        if self._state is None:
            raise EpisodeFinished("reset() must be called before step()")
        if self._t >= self.spec.horizon:
            raise EpisodeFinished(f"episode already ran its {self.spec.horizon} steps")
        self._state = self._dynamics(self._state, self.clip_action(action))
        self._t += 1
        ag = self.achieved_goal(self._state)
        reward = float(self.goal_space.reward(ag, self._goal))
        return EnvStep(self._state.copy(), ag, reward, self._t == self.spec.horizon)

    def compute_reward(self, achieved, desired):
        return self.goal_space.reward(achieved, desired)

    def encode_goal(self, goal):
        """Goal features fed to networks (identity unless overridden)."""
        return np.asarray(goal, dtype=np.float64)

    def achieved_goal(self, state):
        raise NotImplementedError

    def _sample(self, rng):
        raise NotImplementedError

    def _dynamics(self, state, action):
        raise NotImplementedError


class BitFlip(MultiGoalEnv):
    """``n`` binary switches; action component ``i > 0`` flips bit ``i``.

    State and achieved goal are the bit-string itself. The distance is the
    Euclidean norm of the bit difference (sqrt of the Hamming distance), so a
    tolerance of 0.5 accepts only exact matches.
    """

    def __init__(self, n=8, horizon=None):
        super().__init__()
        self.n = int(n)
        if self.n < 1:
            raise ConfigError("BitFlip needs at least one bit")
        horizon = self.n if horizon is None else int(horizon)
        self.spec = EnvSpec(
            env_id=f"bitflip{self.n}",
            state_dim=self.n,
            action_dim=self.n,
            goal_dim=self.n,
            goal_feature_dim=self.n,
            horizon=horizon,
            action_low=(-1.0,) * self.n,
            action_high=(1.0,) * self.n,
            goal_space=GoalSpace(self.n, "euclidean", 0.5),
            max_goal_distance=math.sqrt(self.n),
        )

    def achieved_goal(self, state):
        return np.array(state, dtype=np.float64)

    def _sample(self, rng):
        state = rng.integers(0, 2, size=self.n).astype(np.float64)
        goal = rng.integers(0, 2, size=self.n).astype(np.float64)
        return state, goal

    def _dynamics(self, state, action):
        flip = action > 0.0
        out = state.copy()
        out[flip] = 1.0 - out[flip]
        return out


class PointPush2D(MultiGoalEnv):
    """A point pusher moves a disk across the unit square.

    State layout: ``[agent_x, agent_y, disk_x, disk_y, disk_x - agent_x,
    disk_y - agent_y]``. The achieved goal is the disk position. Contact is
    resolved kinematically: an overlapping disk is pushed out along the line
    joining the centres.
    """

    step_size = 0.05
    contact_radius = 0.07
    disk_range = (0.25, 0.75)
    goal_radius = 0.35
    agent_offset = (0.1, 0.2)

    def __init__(self, horizon=50, tolerance=0.05):
        super().__init__()
        self.spec = EnvSpec(
            env_id="pointpush2d",
            state_dim=6,
            action_dim=2,
            goal_dim=2,
            goal_feature_dim=2,
            horizon=int(horizon),
            action_low=(-1.0, -1.0),
            action_high=(1.0, 1.0),
            goal_space=GoalSpace(2, "euclidean", float(tolerance)),
            max_goal_distance=self.goal_radius,
        )

    def achieved_goal(self, state):
        return np.array(state[2:4], dtype=np.float64)

    def _sample(self, rng):
        disk = rng.uniform(*self.disk_range, size=2)
        # uniform over the disk of radius goal_radius around the object
        r = self.goal_radius * math.sqrt(rng.uniform())
        phi = rng.uniform(-math.pi, math.pi)
        goal = np.clip(disk + r * np.array([math.cos(phi), math.sin(phi)]), 0.05, 0.95)
        psi = rng.uniform(-math.pi, math.pi)
        agent = disk + rng.uniform(*self.agent_offset) * np.array([math.cos(psi), math.sin(psi)])
        agent = np.clip(agent, 0.0, 1.0)
        return self._pack(agent, disk), goal

    @staticmethod
    def _pack(agent, disk):
        return np.concatenate([agent, disk, disk - agent])

    @classmethod
    def push(cls, agent, disk, action):
        """Pure kinematics used by ``step``; exposed for replay checks."""
        new_agent = np.clip(agent + cls.step_size * action, 0.0, 1.0)
        new_disk = disk.copy()
        delta = disk - new_agent
        dist = float(np.hypot(delta[0], delta[1]))
        if dist < cls.contact_radius:
            if dist > 1e-12:
                direction = delta / dist
            else:
                norm = float(np.hypot(action[0], action[1]))
                direction = action / norm if norm > 0 else np.array([1.0, 0.0])
            new_disk = np.clip(new_agent + cls.contact_radius * direction, 0.0, 1.0)
            gap = new_disk - new_agent
            gap_norm = float(np.hypot(gap[0], gap[1]))
            if gap_norm < cls.contact_radius:
                # disk pinned at a wall: the agent is stopped instead
                back = gap / gap_norm if gap_norm > 1e-12 else direction
                new_agent = new_disk - cls.contact_radius * back
        return new_agent, new_disk

    def _dynamics(self, state, action):
        agent, disk = self.push(state[0:2], state[2:4], action)
        return self._pack(agent, disk)


class PlanarRotate(MultiGoalEnv):
    """Torque-limited rotation of a held object towards a target angle.

    State layout: ``[cos(theta), sin(theta), omega / max_speed]``. The
    achieved goal is ``theta`` in [-pi, pi). Reward is paid only while the
    object sits within tolerance, so scoring requires braking and holding.
    """

    torque_gain = 0.06
    damping = 0.9
    max_speed = 0.25

    def __init__(self, horizon=50, tolerance=0.1):
        super().__init__()
        self.spec = EnvSpec(
            env_id="planarrotate",
            state_dim=3,
            action_dim=1,
            goal_dim=1,
            goal_feature_dim=2,
            horizon=int(horizon),
            action_low=(-1.0,),
            action_high=(1.0,),
            goal_space=GoalSpace(1, "angular", float(tolerance)),
            max_goal_distance=math.pi,
        )

    @staticmethod
    def angle(state):
        return math.atan2(state[1], state[0])

    def achieved_goal(self, state):
        return wrap_angle(np.array([self.angle(state)]))

    def encode_goal(self, goal):
        goal = np.asarray(goal, dtype=np.float64)
        return np.concatenate([np.cos(goal), np.sin(goal)], axis=-1)

    def _pack(self, theta, omega):
        return np.array([math.cos(theta), math.sin(theta), omega / self.max_speed])

    def _sample(self, rng):
        theta = rng.uniform(-math.pi, math.pi)
        goal = np.array([rng.uniform(-math.pi, math.pi)])
        return self._pack(theta, 0.0), goal

    def _dynamics(self, state, action):
        theta = self.angle(state)
        omega = state[2] * self.max_speed
        omega = float(np.clip(self.damping * omega + self.torque_gain * action[0], -self.max_speed, self.max_speed))
        theta = float(wrap_angle(theta + omega))
        return self._pack(theta, omega)


ENV_IDS = ("bitflip8", "pointpush2d", "planarrotate")


def make_env(env_id, **params):
    """Build an environment from its string id; ``params`` override constructor defaults."""
    if env_id.startswith("bitflip"):
        suffix = env_id[len("bitflip"):]
        if suffix and "n" not in params:
            if not suffix.isdigit():
                raise ConfigError(f"unknown environment {env_id!r}")
            params["n"] = int(suffix)
        return BitFlip(**params)
    if env_id == "pointpush2d":
        return PointPush2D(**params)
    if env_id == "planarrotate":
        return PlanarRotate(**params)
    raise ConfigError(f"unknown environment {env_id!r}; choose from {', '.join(ENV_IDS)}")

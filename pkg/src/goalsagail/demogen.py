"""Scripted suboptimal demonstrators, demo dataset files, and goal-coverage analysis."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .envs import PlanarRotate, PointPush2D, make_env, wrap_angle
from .errors import DatasetFormatError, DemoGenerationError
from .replay import Trajectory

FORMAT_NAME = "goalsagail-demos"
FORMAT_VERSION = 1
N_BINS = 20
MAX_RESAMPLE = 100_000


@dataclass
class DemoProfile:
    """Quality dials for a scripted demonstrator.

    ``coverage_skew`` is the probability that an episode's goal pair is drawn
    from the easiest quarter of the goal-distance range. Once the object has
    spent ``hold_fraction_target * horizon`` steps at the goal the
    demonstrator lets go.
    """

    controller: str = "scripted"
    noise_scale: float = 0.0
    coverage_skew: float = 0.0
    hold_fraction_target: float = 1.0
    max_attempts: int = 20

    def __post_init__(self):
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if not 0.0 <= self.coverage_skew <= 1.0:
            raise ValueError("coverage_skew must lie in [0, 1]")
        if not 0.0 < self.hold_fraction_target <= 1.0:
            raise ValueError("hold_fraction_target must lie in (0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")


PROFILES = {
    "optimal": DemoProfile(noise_scale=0.0, coverage_skew=0.0, hold_fraction_target=1.0),
    "suboptimal": DemoProfile(noise_scale=0.3, coverage_skew=0.8, hold_fraction_target=0.24),
}


# -- scripted controllers -------------------------------------------------


class Controller:
    """Per-episode scripted policy; ``release`` switches it into letting-go mode."""

    def __init__(self, env, profile, rng):
        self.env = env
        self.profile = profile
        self.rng = rng
        self.at_goal = 0
        self.hold_budget = int(math.floor(profile.hold_fraction_target * env.spec.horizon))
        if profile.hold_fraction_target >= 1.0:
            self.hold_budget = None

    @property
    def released(self):
        return self.hold_budget is not None and self.at_goal >= self.hold_budget

    def observe(self, reward):
        if reward == 0.0:
            self.at_goal += 1

    def __call__(self, state, goal):
        if self.released:
            return self.release_action(state, goal)
        return self.action(state, goal)

    def action(self, state, goal):
        raise NotImplementedError

    def release_action(self, state, goal):
        return self.rng.uniform(self.env.spec.action_low, self.env.spec.action_high)


class BitFlipController(Controller):
    """Flip the first mismatched bit; with probability ``noise_scale`` flip a random bit instead."""

    def action(self, state, goal):
        n = len(state)
        a = -np.ones(n)
        if self.profile.noise_scale > 0 and self.rng.random() < self.profile.noise_scale:
            a[self.rng.integers(n)] = 1.0
            return a
        mismatch = np.flatnonzero(state != goal)
        if len(mismatch):
            a[mismatch[0]] = 1.0
        return a

    def release_action(self, state, goal):
        a = -np.ones(len(state))
        a[self.rng.integers(len(state))] = 1.0
        return a


class PushController(Controller):
    """Orbit to the far side of the disk, then push it along the disk-to-target line."""

    margin = 0.02

    def action(self, state, goal):
        env = self.env
        agent, disk = state[0:2], state[2:4]
        to_goal = goal - disk
        dist = float(np.hypot(*to_goal))
        R = PointPush2D.contact_radius
        step = PointPush2D.step_size
        if dist < 0.5 * env.goal_space.tolerance:
            a = np.zeros(2)
        else:
            u = to_goal / dist
            rel = agent - disk
            along = float(rel @ u)
            lateral = rel - along * u
            lat = float(np.hypot(*lateral))
            if along < 0 and lat < 0.25 * R and float(np.hypot(*rel)) < R + 1.5 * self.margin:
                # behind the disk: push, correcting sideways drift
                a = (min(dist, step) * u - 0.5 * lateral) / step
            else:
                behind = disk - (R + self.margin) * u
                phi_a = math.atan2(rel[1], rel[0])
                phi_b = math.atan2(-u[1], -u[0])
                diff = float(wrap_angle(phi_b - phi_a))
                if abs(diff) < 0.35 or float(np.hypot(*rel)) > 2.5 * R:
                    target = behind
                    if float(np.hypot(*rel)) > 2.5 * R and abs(diff) > 0.35:
                        # far away: aim at a point on the orbit circle first
                        target = disk + (R + 2 * self.margin) * np.array([math.cos(phi_b), math.sin(phi_b)])
                        target = target - 0.5 * R * u
                else:
                    phi = phi_a + float(np.clip(diff, -0.8, 0.8))
                    target = disk + (R + 2 * self.margin) * np.array([math.cos(phi), math.sin(phi)])
                a = (target - agent) / step
        a = a + self.profile.noise_scale * self.rng.standard_normal(2)
        return np.clip(a, -1.0, 1.0)


class RotateController(Controller):
    """Velocity-tracking torque toward the target angle.

    With ``noise_scale > 0`` the tracking gain rises, so the controller
    overshoots and rings around the target, and torque noise is added.
    """

    def action(self, state, goal):
        theta = math.atan2(state[1], state[0])
        omega = state[2] * PlanarRotate.max_speed
        err = float(wrap_angle(goal[0] - theta))
        gain = 0.5 * (1.0 + 6.0 * self.profile.noise_scale)
        w_star = float(np.clip(gain * err, -PlanarRotate.max_speed, PlanarRotate.max_speed))
        u = (w_star - PlanarRotate.damping * omega) / PlanarRotate.torque_gain
        u += self.profile.noise_scale * self.rng.standard_normal()
        return np.clip(np.array([u]), -1.0, 1.0)

    def release_action(self, state, goal):
        # let the object slip away from the target
        theta = math.atan2(state[1], state[0])
        err = float(wrap_angle(goal[0] - theta))
        return np.array([-1.0 if err >= 0 else 1.0])


CONTROLLERS = {
    "bitflip": BitFlipController,
    "pointpush2d": PushController,
    "planarrotate": RotateController,
}


def controller_for(env, profile, rng):
    key = "bitflip" if env.spec.env_id.startswith("bitflip") else env.spec.env_id
    return CONTROLLERS[key](env, profile, rng)


# -- generation -----------------------------------------------------------


def _reset_with_skew(env, profile, rng):
    if profile.coverage_skew > 0 and rng.random() < profile.coverage_skew:
        limit = env.spec.max_goal_distance / 4.0
        for _ in range(MAX_RESAMPLE):
            state, g_init, g_d = env.reset(rng)
            if float(env.goal_space.distance(g_init, g_d)) <= limit:
                return state, g_init, g_d
        raise DemoGenerationError("could not sample an easy goal pair", 0)
    return env.reset(rng)


def rollout(env, policy, rng, reset=None):
    """Run one full episode of ``policy(state, goal) -> action`` and return the trajectory.

    ``policy`` may expose ``observe(reward)``.
    """
    state, ag, goal = reset(env, rng) if reset is not None else env.reset(rng)
    T = env.spec.horizon
    states = [state]
    ags = [ag]
    actions, rewards = [], []
    for _ in range(T):
        a = env.clip_action(policy(state, goal))
        step = env.step(a)
        actions.append(a)
        rewards.append(step.reward)
        states.append(step.next_state)
        ags.append(step.achieved_goal)
        if hasattr(policy, "observe"):
            policy.observe(step.reward)
        state = step.next_state
    return Trajectory(np.array(states), np.array(actions), np.array(ags), goal, np.array(rewards),
                      source="demo_seed")


@dataclass
class DemoDataset:
    header: dict
    trajectories: list = field(default_factory=list)

    @property
    def env_id(self):
        return self.header["env_id"]

    def __len__(self):
        return len(self.trajectories)

    def equals(self, other):
        return (
            self.header == other.header
            and len(self) == len(other)
            and all(a.equals(b) for a, b in zip(self.trajectories, other.trajectories))
        )


def make_header(env, profile, seed, count):
    spec = env.spec
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        **spec.to_dict(),
        "max_goal_distance": spec.max_goal_distance,
        "profile": asdict(profile),
        "seed": seed,
        "count": count,
    }


def generate_demos(env, profile, count, seed):
    """``count`` successful scripted episodes; a pure function of its arguments."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if isinstance(env, str):
        env = make_env(env)
    rng = np.random.default_rng(seed)
    trajs = []
    attempts = 0
    budget = profile.max_attempts * count
    while len(trajs) < count:
        if attempts >= budget:
            raise DemoGenerationError(
                f"only {len(trajs)} of {count} demonstrations succeeded within {budget} attempts",
                len(trajs),
            )
        attempts += 1
        ctrl = controller_for(env, profile, rng)
        traj = rollout(env, ctrl, rng, reset=lambda e, r: _reset_with_skew(e, profile, r))
        if traj.succeeded:
            trajs.append(traj)
    return DemoDataset(make_header(env, profile, seed, count), trajs)


# -- persistence ----------------------------------------------------------


def _record(i, traj):
    return {
        "index": i,
        "states": traj.states.tolist(),
        "actions": traj.actions.tolist(),
        "achieved_goals": traj.achieved_goals.tolist(),
        "desired_goal": traj.desired_goal.tolist(),
        "rewards": traj.rewards.tolist(),
    }


def save_dataset(dataset, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(dataset.header) + "\n")
        for i, traj in enumerate(dataset.trajectories):
            fh.write(json.dumps(_record(i, traj)) + "\n")


def load_dataset(path, env_id=None):
    """Read a dataset file, validating the header and every record against the env spec."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: unreadable header ({exc})") from None
    if header.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{path}: not a demo dataset")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {header.get('version')!r}")
    if env_id is not None and header.get("env_id") != env_id:
        raise DatasetFormatError(f"{path}: dataset is for {header.get('env_id')!r}, expected {env_id!r}")
    env = make_env(header["env_id"])
    spec = env.spec
    for key, value in spec.to_dict().items():
        if header.get(key) != value:
            raise DatasetFormatError(f"{path}: header field {key}={header.get(key)!r} does not match env ({value!r})")
    trajs = []
    for i, line in enumerate(lines[1:]):
        try:
            rec = json.loads(line)
            if rec.get("index") != i:
                raise ValueError(f"index field {rec.get('index')!r}")
            traj = Trajectory(
                np.array(rec["states"], dtype=np.float64),
                np.array(rec["actions"], dtype=np.float64),
                np.array(rec["achieved_goals"], dtype=np.float64),
                np.array(rec["desired_goal"], dtype=np.float64),
                np.array(rec["rewards"], dtype=np.float64),
                source="demo_seed",
            )
            traj.validate(spec)
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetFormatError(f"{path}: record {i} is corrupt ({exc})") from None
        if not traj.succeeded:
            raise DatasetFormatError(f"{path}: record {i} never reaches its goal")
        trajs.append(traj)
    expected = header.get("count")
    if expected is not None and len(trajs) != expected:
        raise DatasetFormatError(f"{path}: record {len(trajs)} missing (header promises {expected})")
    return DemoDataset(header, trajs)


# -- coverage analysis ----------------------------------------------------


@dataclass
class CoverageReport:
    bin_edges: np.ndarray
    mass: np.ndarray
    distances: np.ndarray
    mean_hold_fraction: float
    mean_return: float
    std_return: float
    min_return: float
    max_return: float

    @property
    def n(self):
        return len(self.distances)

    def mass_below(self, fraction):
        """Probability mass in bins lying entirely below ``fraction`` of the range."""
        limit = fraction * self.bin_edges[-1]
        inside = self.bin_edges[1:] <= limit + 1e-12
        return float(self.mass[inside].sum())

    def table(self):
        lines = [
            f"trajectories        {self.n}",
            f"mean goal distance  {np.mean(self.distances):.4f}",
            f"mean hold fraction  {self.mean_hold_fraction:.4f}",
            f"return mean/std     {self.mean_return:.3f} / {self.std_return:.3f}",
            f"return min/max      {self.min_return:.1f} / {self.max_return:.1f}",
            f"mass in lowest 1/3  {self.mass_below(1 / 3):.4f}",
            "",
            f"{'bin_lo':>8} {'bin_hi':>8} {'mass':>8}",
        ]
        for lo, hi, m in zip(self.bin_edges[:-1], self.bin_edges[1:], self.mass):
            lines.append(f"{lo:8.4f} {hi:8.4f} {m:8.4f}  {'#' * int(round(40 * m))}")
        return "\n".join(lines)

    def csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "mass"])
        for lo, hi, m in zip(self.bin_edges[:-1], self.bin_edges[1:], self.mass):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(m))])
        return buf.getvalue()


def coverage_from_trajectories(trajs, space, max_distance, bins=N_BINS):
    if not trajs:
        raise ValueError("coverage analysis needs at least one trajectory")
    g_init = np.array([t.achieved_goals[0] for t in trajs])
    g_d = np.array([t.desired_goal for t in trajs])
    dist = space.distance(g_init, g_d)
    edges = np.linspace(0.0, max_distance, bins + 1)
    counts, _ = np.histogram(np.clip(dist, 0.0, max_distance), bins=edges)
    returns = np.array([t.episode_return for t in trajs])
    return CoverageReport(
        bin_edges=edges,
        mass=counts / counts.sum(),
        distances=dist,
        mean_hold_fraction=float(np.mean([t.hold_fraction for t in trajs])),
        mean_return=float(returns.mean()),
        std_return=float(returns.std()),
        min_return=float(returns.min()),
        max_return=float(returns.max()),
    )


def analyze_coverage(dataset, bins=N_BINS):
    env = make_env(dataset.env_id)
    max_d = dataset.header.get("max_goal_distance", env.spec.max_goal_distance)
    return coverage_from_trajectories(dataset.trajectories, env.goal_space, max_d, bins)

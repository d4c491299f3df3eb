"""Training orchestration: data collection with admission routing, discriminator
training, HER policy updates, evaluation, checkpoints and multi-seed suites."""

from __future__ import annotations

import copy
import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import ActorCritic
from .config import TrainConfig, from_dict
from .demogen import controller_for, load_dataset, DemoProfile
from .envs import make_env
from .errors import ConfigError, InvariantViolation
from .gail import Discriminator, GailWeightSchedule, mix_reward, train_discriminator
from .her import RelabelConfig, relabel
from .nn import load_checkpoint, save_checkpoint
from .replay import AgentBuffer, ExpertBuffer, Trajectory, sample_transitions, union_ratio
from .sagail import AdmissionConfig, AdmissionStats, decide_admission

log = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "epoch", "seed", "success_rate", "mean_return", "admit_direct", "admit_better",
    "reject", "disc_loss", "delta_gail",
]
SUITE_COLUMNS = [
    "epoch", "n_seeds", "success_mean", "success_min", "success_max",
    "return_mean", "return_min", "return_max",
]
CHECKPOINT_NAME = "checkpoint.npz"


# -- rollouts -------------------------------------------------------------


def run_episodes(envs, rngs, act):
    """Run one episode in each env in lockstep; ``act(states, goals)`` is batched."""
    starts = [env.reset(rng) for env, rng in zip(envs, rngs)]
    T = envs[0].spec.horizon
    n = len(envs)
    states = np.zeros((n, T + 1, envs[0].spec.state_dim))
    ags = np.zeros((n, T + 1, envs[0].spec.goal_dim))
    actions = np.zeros((n, T, envs[0].spec.action_dim))
    rewards = np.zeros((n, T))
    goals = np.array([s[2] for s in starts])
    for i, (s, ag, _) in enumerate(starts):
        states[i, 0] = s
        ags[i, 0] = ag
    for t in range(T):
        a = act(states[:, t], goals)
        for i, env in enumerate(envs):
            clipped = env.clip_action(a[i])
            step = env.step(clipped)
            actions[i, t] = clipped
            states[i, t + 1] = step.next_state
            ags[i, t + 1] = step.achieved_goal
            rewards[i, t] = step.reward
    return [Trajectory(states[i], actions[i], ags[i], goals[i], rewards[i], source="agent") for i in range(n)]


class ScriptedPolicy:
    """Wraps per-env scripted controllers behind the batched ``act`` interface."""

    def __init__(self, env, profile=None, seed=0):
        self.env = env
        self.profile = profile or DemoProfile()
        self.rng = np.random.default_rng(seed)
        self.controllers = []
        self._last = None

    def __call__(self, states, goals):
        if not self.controllers or self._last is None or len(self.controllers) != len(states):
            self.controllers = [controller_for(self.env, self.profile, self.rng) for _ in states]
        out = np.array([c(s, g) for c, s, g in zip(self.controllers, states, goals)])
        self._last = out
        return out


@dataclass
class EvalResult:
    success_rate: float
    mean_return: float
    successes: list
    returns: list


def evaluate(env_id, env_params, act, episodes, seed, batch=100):
    """Deterministic evaluation: success means the goal holds at the final step."""
    ss = np.random.SeedSequence([int(seed), 104729])
    rngs = [np.random.default_rng(s) for s in ss.spawn(episodes)]
    successes, returns = [], []
    for start in range(0, episodes, batch):
        chunk = rngs[start:start + batch]
        envs = [make_env(env_id, **env_params) for _ in chunk]
        if isinstance(act, ScriptedPolicy):
            act.controllers = []
        for traj in run_episodes(envs, chunk, act):
            successes.append(traj.final_success)
            returns.append(traj.episode_return)
    return EvalResult(float(np.mean(successes)), float(np.mean(returns)), successes, returns)


# -- metrics --------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    seed: int
    success_rate: float
    mean_return: float
    admit_direct: int
    admit_better: int
    reject: int
    disc_loss: float
    delta_gail: float
    train_success_rate: float = float("nan")
    mean_d_min: float = float("nan")
    expert_size: int = 0
    expert_goal_distance: float = float("nan")
    policy_critic_loss: float = float("nan")
    wall_clock: float = 0.0


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)

    def append(self, row):
        if self.rows and row.epoch != self.rows[-1].epoch + 1:
            raise InvariantViolation("metrics rows must be appended once per epoch, in order")
        self.rows.append(row)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRICS_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(getattr(r, c)) for c in METRICS_COLUMNS])

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.rows:
                fh.write(json.dumps(asdict(r)) + "\n")

    def to_list(self):
        return [asdict(r) for r in self.rows]

    @classmethod
    def from_list(cls, rows):
        return cls([EpochRecord(**r) for r in rows])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- training -------------------------------------------------------------


@dataclass
class RunResult:
    config: TrainConfig
    metrics: MetricsLog
    checkpoint: str | None
    final_eval: EvalResult
    trainer: "Trainer"


class Trainer:
    """Owns every piece of mutable training state for one seed."""

    def __init__(self, config, demos=None):
        self.config = config.validate()
        cfg = config
        self.components = []
        self.events = []
        self.env = make_env(cfg.env, **cfg.env_params)
        self.spec = self.env.spec
        ss = np.random.SeedSequence(int(cfg.seed))
        init_ss, sample_ss, noise_ss, worker_ss = ss.spawn(4)
        init_rng = np.random.default_rng(init_ss)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.worker_rngs = [np.random.default_rng(s) for s in worker_ss.spawn(cfg.episodes_per_cycle)]
        self.envs = [make_env(cfg.env, **cfg.env_params) for _ in range(cfg.episodes_per_cycle)]
        self.her = RelabelConfig(replay_k=cfg.her.replay_k)

        agent_cfg = cfg.agent if cfg.algo == "ddpgfd_her" else replace(cfg.agent, bc_weight=0.0)
        self.policy = ActorCritic(self.spec, agent_cfg, init_rng, encode_goal=self.env.encode_goal)
        self.components.append("actor_critic")
        self.agent_buffer = AgentBuffer(self.spec, cfg.agent_buffer_capacity)
        self.components.append("agent_buffer")

        self.expert_buffer = None
        self.discriminator = None
        self.admission = None
        if cfg.uses_demos:
            if demos is None:
                if cfg.demos is None:
                    raise ConfigError(f"algo {cfg.algo!r} needs a demonstration dataset")
                demos = load_dataset(cfg.demos, env_id=self.spec.env_id).trajectories
            self.expert_buffer = ExpertBuffer.for_demos(self.spec, demos, cfg.admission.expert_capacity_factor)
            self.components.append("expert_buffer")
            for traj in demos:
                self._update_normalizers(traj)
        if cfg.uses_discriminator:
            self.discriminator = Discriminator(
                self.spec, cfg.disc, init_rng, self.policy.state_norm, self.policy.goal_norm, self.env.encode_goal
            )
            self.components.append("discriminator")
        if cfg.uses_admission:
            self.admission = AdmissionConfig(cfg.c_comb(), cfg.admission.require_success)
            self.components.append("admission")
        horizon = cfg.gail.anneal_epochs if cfg.gail.anneal_epochs is not None else max(cfg.epochs, 1)
        self.gail_schedule = GailWeightSchedule(cfg.gail.initial_weight, cfg.gail.anneal, horizon)

        self.metrics = MetricsLog()
        self.epoch = 0
        self.episode_counter = 0
        self.wall_clock = 0.0

    # -- helpers ----------------------------------------------------------

    def _update_normalizers(self, traj):
        goals = np.concatenate([traj.achieved_goals, traj.desired_goal[None]])
        self.policy.update_normalizers(traj.states, goals)

    def _explore(self, states, goals):
        return self.policy.act(states, goals, explore=True, rng=self.noise_rng)

    def _greedy(self, states, goals):
        return self.policy.act(states, goals, explore=False)

    def demo_ratio(self, progress):
        """Expert share of policy batches at training ``progress`` in [0, 1]."""
        if self.expert_buffer is None:
            return 0.0
        union = union_ratio(self.agent_buffer, self.expert_buffer)
        if self.config.demo_sampling == "union":
            return union
        frac = self.config.demo_ratio_anneal_frac
        w = max(0.0, 1.0 - progress / frac) if frac > 0 else 0.0
        return w * self.config.demo_ratio_initial + (1.0 - w) * union

    def q_bounds(self, delta):
        gamma = self.config.agent.gamma
        lo, hi = -1.0, 0.0
        if self.discriminator is not None and delta > 0:
            d_lo, d_hi = self.discriminator.reward_bounds()
            lo = (1.0 - delta) * -1.0 + delta * d_lo
            hi = delta * d_hi
        return min(lo, 0.0) / (1.0 - gamma), max(hi, 0.0) / (1.0 - gamma)

    # -- algorithm steps --------------------------------------------------

    def collect(self, cycle):
        trajs = run_episodes(self.envs, self.worker_rngs, self._explore)
        first = self.episode_counter
        self.episode_counter += len(trajs)
        self.events.append(("collect", cycle, first, self.episode_counter - 1))
        return trajs

    def store(self, trajs, stats):
        """Route each finished trajectory to exactly one buffer."""
        for traj in trajs:
            self._update_normalizers(traj)
            if self.admission is not None:
                before = len(self.expert_buffer)
                verdict = decide_admission(traj, self.expert_buffer, self.spec.goal_space, self.admission)
                stats.record(verdict)
                if verdict.admitted:
                    self.expert_buffer.push(traj.with_source("self_admitted"))
                    if len(self.expert_buffer) < before:
                        raise InvariantViolation("expert buffer shrank after an admission")
                else:
                    self.agent_buffer.push(traj)
            else:
                self.agent_buffer.push(traj)
        if self.expert_buffer is not None and len(self.expert_buffer) > self.expert_buffer.capacity:
            raise InvariantViolation("expert buffer exceeded its capacity")

    def train_discriminator(self, cycle):
        cfg = self.config
        losses = train_discriminator(
            self.discriminator, self.agent_buffer, self.expert_buffer, self.her,
            cfg.disc.n_batches, cfg.disc.batch_size, self.sample_rng,
        )
        self.events.append(("disc", cycle, len(losses)))
        return losses

    def policy_updates(self, cycle, delta, progress):
        cfg = self.config
        space = self.spec.goal_space
        bounds = self.q_bounds(delta)
        diags = []
        for _ in range(cfg.policy_batches):
            if not len(self.agent_buffer) and self.expert_buffer is None:
                break
            ratio = self.demo_ratio(progress)
            if not len(self.agent_buffer):
                ratio = 1.0
            batch = sample_transitions(self.agent_buffer, self.expert_buffer, cfg.policy_batch_size, ratio,
                                       self.sample_rng)
            batch = relabel(batch, self.her, space, self.sample_rng)
            rewards = batch.rewards
            if self.discriminator is not None and delta > 0:
                rewards = mix_reward(rewards, self.discriminator.reward(batch), delta)
            diags.append(self.policy.update(batch, rewards, bounds))
        self.events.append(("policy", cycle, len(diags), self.episode_counter - 1))
        self.policy.soft_update()
        return diags

    def run_epoch(self):
        cfg = self.config
        t0 = time.perf_counter()
        epoch = self.epoch
        delta = self.gail_schedule.value(epoch) if self.discriminator is not None else 0.0
        stats = AdmissionStats()
        disc_losses, critic_losses, train_success = [], [], []
        for c in range(cfg.cycles_per_epoch):
            cycle = epoch * cfg.cycles_per_epoch + c
            progress = cycle / max(cfg.epochs * cfg.cycles_per_epoch, 1)
            trajs = self.collect(cycle)
            train_success.extend(t.final_success for t in trajs)
            self.store(trajs, stats)
            if self.discriminator is not None:
                disc_losses.extend(self.train_discriminator(cycle))
            diags = self.policy_updates(cycle, delta, progress)
            critic_losses.extend(d["critic_loss"] for d in diags)
        result = evaluate(cfg.env, cfg.env_params, self._greedy, cfg.eval_episodes,
                          seed=_eval_seed(cfg.seed, epoch))
        self.wall_clock += time.perf_counter() - t0
        row = EpochRecord(
            epoch=epoch,
            seed=cfg.seed,
            success_rate=result.success_rate,
            mean_return=result.mean_return,
            admit_direct=stats.admit_direct,
            admit_better=stats.admit_better,
            reject=stats.reject,
            disc_loss=float(np.mean(disc_losses)) if disc_losses else float("nan"),
            delta_gail=float(delta),
            train_success_rate=float(np.mean(train_success)),
            mean_d_min=stats.mean_d_min,
            expert_size=len(self.expert_buffer) if self.expert_buffer is not None else 0,
            expert_goal_distance=(self.expert_buffer.mean_goal_pair_distance()
                                  if self.expert_buffer is not None else float("nan")),
            policy_critic_loss=float(np.mean(critic_losses)) if critic_losses else float("nan"),
            wall_clock=self.wall_clock,
        )
        self.metrics.append(row)
        self.epoch += 1
        log.info("epoch %d seed %d success %.3f (train %.3f) delta %.3f admit %d/%d reject %d",
                 epoch, cfg.seed, row.success_rate, row.train_success_rate, delta,
                 row.admit_direct, row.admit_better, row.reject)
        return row

    def evaluate(self, episodes=None, seed=None):
        cfg = self.config
        return evaluate(cfg.env, cfg.env_params, self._greedy, episodes or cfg.eval_episodes,
                        seed=_eval_seed(cfg.seed, self.epoch) if seed is None else seed)

    # -- persistence ------------------------------------------------------

    def save(self, path):
        arrays = self.policy.state_arrays()
        arrays.update(self.agent_buffer.state_arrays("agent_buffer."))
        if self.expert_buffer is not None:
            arrays.update(self.expert_buffer.state_arrays("expert_buffer."))
        if self.discriminator is not None:
            arrays.update(self.discriminator.state_arrays())
        meta = {
            "kind": "training_state",
            "config": self.config.to_dict(),
            "env_spec": self.spec.to_dict(),
            "epoch": self.epoch,
            "episode_counter": self.episode_counter,
            "wall_clock": self.wall_clock,
            "metrics": self.metrics.to_list(),
            "rng": {
                "sample": self.sample_rng.bit_generator.state,
                "noise": self.noise_rng.bit_generator.state,
                "workers": [r.bit_generator.state for r in self.worker_rngs],
            },
        }
        save_checkpoint(path, meta, arrays)

    def load(self, path):
        meta, arrays = load_checkpoint(path)
        if meta.get("kind") != "training_state":
            raise ValueError(f"{path} is not a training checkpoint")
        if meta["env_spec"] != self.spec.to_dict():
            raise ConfigError("checkpoint environment does not match the configured environment")
        self.policy.load_arrays(arrays)
        self.agent_buffer.load_arrays(arrays, "agent_buffer.")
        if self.expert_buffer is not None:
            self.expert_buffer.load_arrays(arrays, "expert_buffer.")
        if self.discriminator is not None:
            self.discriminator.load_arrays(arrays)
            self.discriminator.state_norm = self.policy.state_norm
            self.discriminator.goal_norm = self.policy.goal_norm
        self.epoch = int(meta["epoch"])
        self.episode_counter = int(meta["episode_counter"])
        self.wall_clock = float(meta["wall_clock"])
        self.metrics = MetricsLog.from_list(meta["metrics"])
        self.sample_rng.bit_generator.state = meta["rng"]["sample"]
        self.noise_rng.bit_generator.state = meta["rng"]["noise"]
        for r, s in zip(self.worker_rngs, meta["rng"]["workers"]):
            r.bit_generator.state = s
        return meta


def _eval_seed(seed, epoch):
    return int(seed) * 100_003 + int(epoch)


def _config_signature(cfg):
    d = cfg.to_dict()
    d.pop("epochs", None)
    d.pop("seeds", None)
    return json.dumps(d, sort_keys=True)


def run_training(config, out_dir=None, demos=None, resume=True, on_epoch=None):
    """Train one seed for ``config.epochs`` epochs, checkpointing after each epoch.

    With ``resume`` and an existing checkpoint for the same configuration in
    ``out_dir`` the run continues from it.
    """
    trainer = Trainer(config, demos=demos)
    ckpt = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = str(out_dir / CHECKPOINT_NAME)
        if resume and os.path.exists(ckpt):
            meta = load_checkpoint(ckpt)[0]
            if _config_signature(from_dict(meta["config"])) == _config_signature(config):
                trainer.load(ckpt)
                log.info("resumed from %s at epoch %d", ckpt, trainer.epoch)
    while trainer.epoch < config.epochs:
        trainer.run_epoch()
        if out_dir is not None:
            trainer.save(ckpt)
            trainer.metrics.write_csv(out_dir / "metrics.csv")
            trainer.metrics.write_jsonl(out_dir / "metrics.jsonl")
        if on_epoch is not None:
            on_epoch(trainer)
    if out_dir is not None:
        if config.epochs == 0 or not os.path.exists(ckpt):
            trainer.save(ckpt)
        trainer.metrics.write_csv(out_dir / "metrics.csv")
        trainer.metrics.write_jsonl(out_dir / "metrics.jsonl")
    if trainer.metrics.rows:
        last = trainer.metrics.rows[-1]
        final = EvalResult(last.success_rate, last.mean_return, [], [])
    else:
        final = trainer.evaluate()
    return RunResult(config, trainer.metrics, ckpt, final, trainer)


def load_policy(path):
    """Rebuild the trained actor-critic and its config from a checkpoint."""
    meta, arrays = load_checkpoint(path)
    cfg = from_dict(meta["config"])
    env = make_env(cfg.env, **cfg.env_params)
    policy = ActorCritic(env.spec, cfg.agent, np.random.default_rng(0), encode_goal=env.encode_goal)
    policy.load_arrays(arrays)
    return cfg, policy


def run_eval(checkpoint, env_id=None, episodes=100, seed=0, env_params=None):
    cfg, policy = load_policy(checkpoint)
    env_id = env_id or cfg.env
    env_params = cfg.env_params if env_params is None else env_params
    env = make_env(env_id, **env_params)
    if env.spec.to_dict() != make_env(cfg.env, **cfg.env_params).spec.to_dict():
        raise ConfigError(f"checkpoint was trained on {cfg.env!r}, not {env_id!r}")
    return evaluate(env_id, env_params, lambda s, g: policy.act(s, g), episodes, seed)


# -- suites ---------------------------------------------------------------


def aggregate(per_seed):
    """Per-epoch mean/min/max across seeds; epochs missing from some seeds use the seeds that have them."""
    by_epoch = {}
    for rows in per_seed.values():
        for r in rows:
            by_epoch.setdefault(int(r["epoch"]), []).append(r)
    out = []
    for epoch in sorted(by_epoch):
        rows = by_epoch[epoch]
        s = np.array([float(r["success_rate"]) for r in rows])
        ret = np.array([float(r["mean_return"]) for r in rows])
        out.append({
            "epoch": epoch, "n_seeds": len(rows),
            "success_mean": float(s.mean()), "success_min": float(s.min()), "success_max": float(s.max()),
            "return_mean": float(ret.mean()), "return_min": float(ret.min()), "return_max": float(ret.max()),
        })
    return out


def write_suite_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUITE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SUITE_COLUMNS])


def run_suite(config, out_dir, demos=None):
    """Train every seed in ``config.seeds`` and write ``aggregate.csv`` next to the per-seed logs."""
    if not config.seeds:
        raise ConfigError("suite needs at least one seed")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_seed = {}
    failures = {}
    for seed in config.seeds:
        cfg = copy.deepcopy(config)
        cfg.seed = int(seed)
        try:
            run_training(cfg, out_dir / f"seed_{seed}", demos=demos)
            per_seed[seed] = read_metrics_csv(out_dir / f"seed_{seed}" / "metrics.csv")
        except Exception as exc:  # noqa: BLE001 - reported and aggregated around
            log.warning("seed %s failed: %s", seed, exc)
            failures[seed] = str(exc)
    if not per_seed:
        raise InvariantViolation(f"all seeds failed: {failures}")
    if failures:
        log.warning("aggregating over %d completed seeds; failed: %s", len(per_seed), sorted(failures))
    rows = aggregate(per_seed)
    write_suite_csv(rows, out_dir / "aggregate.csv")
    return rows, failures


def epochs_to_threshold(successes, threshold, sustain=1):
    """First epoch index from which ``sustain`` consecutive evaluations reach ``threshold``.

    Runs shorter than ``sustain`` at the end count if every remaining epoch
    qualifies. Returns ``len(successes)`` when the threshold is never reached.
    """
    n = len(successes)
    for i in range(n):
        window = successes[i:i + sustain]
        if window and all(s >= threshold for s in window):
            return i
    return n


def summarize_curves(rows, thresholds=(0.6, 0.9)):
    succ = [r["success_mean"] if "success_mean" in r else float(r["success_rate"]) for r in rows]
    succ = [float(s) for s in succ]
    out = {"epochs": len(succ), "final_success": succ[-1] if succ else float("nan"),
           "best_success": max(succ) if succ else float("nan")}
    for th in thresholds:
        out[f"epochs_to_{int(th * 100)}"] = epochs_to_threshold(succ, th)
    return out

"""Goal-conditioned discriminator, its training loop, and reward mixing."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError
from .her import relabel
from .nn import DenseNet, Optimizer, adam_arrays, adam_from_arrays, net_arrays, net_from_arrays

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-8
OUTPUT_MODES = ("raw", "sigmoid", "log_sigmoid")


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def discriminator_loss_from_logits(agent_logits, expert_logits):
    """``mean log D(agent) + mean log(1 - D(expert))`` with ``D = sigmoid(logit)``.

    Returns ``(loss, grad_agent_logits, grad_expert_logits)``. Probabilities are
    clamped to ``[1e-8, 1 - 1e-8]``; the gradient is zero where the clamp is
    active.
    """
    agent_logits = np.asarray(agent_logits, dtype=np.float64)
    expert_logits = np.asarray(expert_logits, dtype=np.float64)
    if agent_logits.size == 0 or expert_logits.size == 0:
        raise ValueError("discriminator loss needs non-empty agent and expert batches")
    lo, hi = PROB_CLAMP, 1.0 - PROB_CLAMP
    p_a = _sigmoid(agent_logits)
    p_e = _sigmoid(expert_logits)
    pa_c = np.clip(p_a, lo, hi)
    pe_c = np.clip(p_e, lo, hi)
    loss = float(np.mean(np.log(pa_c)) + np.mean(np.log(1.0 - pe_c)))
    # d/dz log(sigmoid z) = 1 - sigmoid z ; d/dz log(1 - sigmoid z) = -sigmoid z
    g_a = np.where((p_a > lo) & (p_a < hi), 1.0 - p_a, 0.0) / agent_logits.size
    g_e = np.where((p_e > lo) & (p_e < hi), -p_e, 0.0) / expert_logits.size
    return loss, g_a, g_e


def _softplus(z):
    return np.logaddexp(0.0, z)


def cross_entropy_from_logits(agent_logits, expert_logits):
    """``-mean log D(expert) - mean log(1 - D(agent))`` computed stably from logits.

    Same targets as :func:`discriminator_loss_from_logits` (D -> 1 on expert,
    D -> 0 on agent) but bounded below with an interior optimum, so gradient
    descent does not run every logit into the clamp when the two data sets
    overlap. Returns ``(loss, grad_agent_logits, grad_expert_logits)``.
    """
    agent_logits = np.asarray(agent_logits, dtype=np.float64)
    expert_logits = np.asarray(expert_logits, dtype=np.float64)
    if agent_logits.size == 0 or expert_logits.size == 0:
        raise ValueError("discriminator loss needs non-empty agent and expert batches")
    loss = float(np.mean(_softplus(agent_logits)) + np.mean(_softplus(-expert_logits)))
    g_a = _sigmoid(agent_logits) / agent_logits.size
    g_e = -_sigmoid(-expert_logits) / expert_logits.size
    return loss, g_a, g_e


OBJECTIVES = {"cross_entropy": cross_entropy_from_logits, "literal": discriminator_loss_from_logits}


def discriminator_loss_from_probs(agent_probs, expert_probs):
    """Loss on probabilities directly (same clamp); handy for checking values by hand."""
    lo, hi = PROB_CLAMP, 1.0 - PROB_CLAMP
    pa = np.clip(np.asarray(agent_probs, dtype=np.float64), lo, hi)
    pe = np.clip(np.asarray(expert_probs, dtype=np.float64), lo, hi)
    return float(np.mean(np.log(pa)) + np.mean(np.log(1.0 - pe)))


def mix_reward(r_env, d_value, delta):
    """``(1 - delta) * r_env + delta * d_value``."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"GAIL weight must lie in [0, 1], got {delta}")
    return (1.0 - delta) * np.asarray(r_env, dtype=np.float64) + delta * np.asarray(d_value, dtype=np.float64)


@dataclass(frozen=True)
class GailWeightSchedule:
    initial: float = 0.5
    anneal: str = "linear_to_zero"
    anneal_horizon: int = 1

    def __post_init__(self):
        if not 0.0 <= self.initial <= 1.0:
            raise ValueError("initial GAIL weight must lie in [0, 1]")
        if self.anneal not in ("none", "linear_to_zero"):
            raise ValueError(f"unknown anneal mode {self.anneal!r}")

    def value(self, epoch):
        if self.anneal == "none":
            return self.initial
        frac = min(max(epoch, 0) / max(self.anneal_horizon, 1), 1.0)
        return self.initial * (1.0 - frac)


@dataclass
class DiscriminatorConfig:
    hidden_sizes: tuple = (256, 256, 256, 256)
    learning_rate: float = 1e-3
    # sigmoid: the reward is the discriminator probability D; raw and log_sigmoid are alternates
    output_mode: str = "sigmoid"
    reward_clip: float = 5.0
    n_batches: int = 40
    batch_size: int = 512
    goal_conditioned: bool = True
    # what gradient descent minimizes; the logged loss is always the documented one
    objective: str = "cross_entropy"


class Discriminator:
    """``D(s, g, a)``; with ``goal_conditioned=False`` the goal is dropped (plain ``D(s, a)``)."""

    def __init__(self, spec, config, rng, state_norm, goal_norm, encode_goal):
        if config.output_mode not in OUTPUT_MODES:
            raise ValueError(f"unknown output mode {config.output_mode!r}")
        if config.objective not in OBJECTIVES:
            raise ValueError(f"unknown discriminator objective {config.objective!r}")
        self.spec = spec
        self.config = config
        self.state_norm = state_norm
        self.goal_norm = goal_norm
        self.encode_goal = encode_goal
        low = np.asarray(spec.action_low, dtype=np.float64)
        high = np.asarray(spec.action_high, dtype=np.float64)
        self._center = 0.5 * (high + low)
        self._scale = 0.5 * (high - low)
        in_dim = spec.state_dim + spec.action_dim
        if config.goal_conditioned:
            in_dim += spec.goal_feature_dim
        self.net = DenseNet([in_dim, *config.hidden_sizes, 1], "relu", "identity", rng=rng)
        self.opt = Optimizer(self.net, config.learning_rate)
        self.clip_events = 0

    def inputs(self, states, goals, actions):
        parts = [self.state_norm(np.asarray(states, dtype=np.float64))]
        if self.config.goal_conditioned:
            parts.append(self.goal_norm(self.encode_goal(goals)))
        parts.append((np.asarray(actions, dtype=np.float64) - self._center) / self._scale)
        return np.concatenate(parts, axis=1)

    def logits(self, states, goals, actions):
        return self.net.forward(self.inputs(states, goals, actions))[:, 0]

    def batch_logits(self, batch):
        return self.logits(batch.states, batch.desired_goals, batch.actions)

    def reward(self, batch):
        """GAIL reward channel for ``batch`` according to ``output_mode``."""
        z = self.batch_logits(batch)
        mode = self.config.output_mode
        if mode == "sigmoid":
            return _sigmoid(z)
        if mode == "log_sigmoid":
            r = np.log(np.clip(_sigmoid(z), PROB_CLAMP, 1.0))
        else:
            r = z
        c = self.config.reward_clip
        clipped = np.clip(r, -c, c)
        n = int(np.count_nonzero(clipped != r))
        if n:
            self.clip_events += n
            log.debug("clipped %d discriminator rewards to +-%g", n, c)
        return clipped

    def reward_bounds(self):
        mode = self.config.output_mode
        c = self.config.reward_clip
        if mode == "sigmoid":
            return 0.0, 1.0
        if mode == "log_sigmoid":
            return -c, 0.0
        return -c, c

    def loss_and_grads(self, agent_batch, expert_batch):
        """``(objective value, parameter gradients, documented loss value)``."""
        xa = self.inputs(agent_batch.states, agent_batch.desired_goals, agent_batch.actions)
        xe = self.inputs(expert_batch.states, expert_batch.desired_goals, expert_batch.actions)
        x = np.concatenate([xa, xe])
        z, cache = self.net.forward_cached(x)
        n_a = len(xa)
        za, ze = z[:n_a, 0], z[n_a:, 0]
        loss, g_a, g_e = OBJECTIVES[self.config.objective](za, ze)
        grads, _ = self.net.backward(cache, np.concatenate([g_a, g_e])[:, None])
        return loss, grads, discriminator_loss_from_logits(za, ze)[0]

    def train_step(self, agent_batch, expert_batch):
        """One optimizer step; returns the documented loss for the trace."""
        loss, grads, reported = self.loss_and_grads(agent_batch, expert_batch)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite discriminator loss {loss}")
        self.opt.step(grads)
        return reported

    def state_arrays(self):
        out = net_arrays(self.net, "disc.")
        out.update(adam_arrays(self.opt.state, "disc_opt."))
        return out

    def load_arrays(self, arrays):
        self.net = net_from_arrays(arrays, "disc.")
        self.opt.net = self.net
        self.opt.state = adam_from_arrays(arrays, "disc_opt.", len(self.net.params()))


def train_discriminator(disc, agent_buffer, expert_buffer, her_config, n_batches, batch_size, rng):
    """Run ``n_batches`` discriminator steps on HER-relabeled expert and agent samples.

    Returns the list of per-step losses; an empty buffer skips training with a
    warning.
    """
    if n_batches <= 0:
        return []
    if agent_buffer is None or expert_buffer is None or not len(agent_buffer) or not len(expert_buffer):
        log.warning("discriminator update skipped: agent or expert buffer is empty")
        return []
    space = disc.spec.goal_space
    losses = []
    for _ in range(n_batches):
        expert = relabel(expert_buffer.sample(batch_size, rng), her_config, space, rng)
        agent = relabel(agent_buffer.sample(batch_size, rng), her_config, space, rng)
        losses.append(disc.train_step(agent, expert))
    return losses

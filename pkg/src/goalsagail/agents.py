"""Goal-conditioned DDPG with target networks.

The same actor-critic drives all four algorithm variants. The optional
behaviour-cloning term with a Q-filter turns it into the DDPGfD baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError
from .nn import (
    DenseNet,
    Normalizer,
    Optimizer,
    adam_arrays,
    adam_from_arrays,
    net_arrays,
    net_from_arrays,
)


@dataclass
class AgentConfig:
    hidden_sizes: list = field(default_factory=lambda: [256, 256, 256, 256])
    hidden_activation: str = "relu"
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    gamma: float = 0.98
    polyak: float = 0.05
    action_l2: float = 1.0
    noise_scale: float = 0.2
    random_eps: float = 0.3
    normalize: bool = True
    clip_range: float = 5.0
    # behaviour-cloning term; the trainer turns it off for every algo except ddpgfd_her
    bc_weight: float = 1.0
    q_filter: bool = True


def soft_update(online, target, tau):
    """In-place ``target <- tau * online + (1 - tau) * target``."""
    for p, q in zip(online.params(), target.params()):
        q *= 1.0 - tau
        q += tau * p


class ActorCritic:
    """Actor ``(s, g) -> a`` and critic ``(s, g, a) -> Q`` with Polyak-averaged targets."""

    def __init__(self, spec, config, rng, encode_goal=None):
        self.spec = spec
        self.config = config
        self.encode_goal = encode_goal if encode_goal is not None else (lambda g: np.asarray(g, dtype=np.float64))
        low = np.asarray(spec.action_low, dtype=np.float64)
        high = np.asarray(spec.action_high, dtype=np.float64)
        self.action_center = 0.5 * (high + low)
        self.action_scale = 0.5 * (high - low)
        self.state_norm = Normalizer(spec.state_dim, config.clip_range, enabled=config.normalize)
        self.goal_norm = Normalizer(spec.goal_feature_dim, config.clip_range, enabled=config.normalize)
        in_dim = spec.state_dim + spec.goal_feature_dim
        hidden = list(config.hidden_sizes)
        self.actor = DenseNet([in_dim, *hidden, spec.action_dim], config.hidden_activation, "tanh",
                              rng=rng, final_layer_scale=1e-2)
        self.critic = DenseNet([in_dim + spec.action_dim, *hidden, 1], config.hidden_activation, "identity",
                               rng=rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Optimizer(self.actor, config.actor_lr)
        self.critic_opt = Optimizer(self.critic, config.critic_lr)

    # -- inputs -----------------------------------------------------------

    def update_normalizers(self, states, goals):
        self.state_norm.update(states)
        self.goal_norm.update(self.encode_goal(goals))

    def inputs(self, states, goals):
        states = np.asarray(states, dtype=np.float64).reshape(-1, self.spec.state_dim)
        goals = np.asarray(goals, dtype=np.float64).reshape(-1, self.spec.goal_dim)
        return np.concatenate([self.state_norm(states), self.goal_norm(self.encode_goal(goals))], axis=1)

    def scale_action(self, unit):
        return self.action_center + self.action_scale * unit

    def unit_action(self, action):
        return (np.asarray(action, dtype=np.float64) - self.action_center) / self.action_scale

    # -- acting -----------------------------------------------------------

    def act(self, states, goals, explore=False, rng=None):
        """Batched actions; exploration adds Gaussian noise then epsilon-uniform replacement."""
        unit = self.actor.forward(self.inputs(states, goals))
        if explore:
            cfg = self.config
            unit = unit + cfg.noise_scale * rng.standard_normal(unit.shape)
            unit = np.clip(unit, -1.0, 1.0)
            random_unit = rng.uniform(-1.0, 1.0, size=unit.shape)
            swap = rng.random(unit.shape[0]) < cfg.random_eps
            unit = np.where(swap[:, None], random_unit, unit)
        return self.scale_action(unit)

    def q_value(self, states, goals, actions, target=False):
        net = self.critic_target if target else self.critic
        x = np.concatenate([self.inputs(states, goals), self.unit_action(actions)], axis=1)
        return net.forward(x)[:, 0]

    # -- learning ---------------------------------------------------------

    def critic_targets(self, batch, rewards, q_bounds):
        x_next = self.inputs(batch.next_states, batch.desired_goals)
        a_next = self.actor_target.forward(x_next)
        q_next = self.critic_target.forward(np.concatenate([x_next, a_next], axis=1))[:, 0]
        y = rewards + self.config.gamma * q_next
        return np.clip(y, q_bounds[0], q_bounds[1])

    def critic_loss_and_grads(self, x, actions_unit, y):
        q, cache = self.critic.forward_cached(np.concatenate([x, actions_unit], axis=1))
        diff = q[:, 0] - y
        loss = float(np.mean(diff**2))
        grads, _ = self.critic.backward(cache, (2.0 / len(y)) * diff[:, None])
        return loss, grads

    def actor_loss_and_grads(self, x, demo_unit=None, demo_mask=None):
        cfg = self.config
        n = x.shape[0]
        a, acache = self.actor.forward_cached(x)
        q, ccache = self.critic.forward_cached(np.concatenate([x, a], axis=1))
        pre = acache["pre"][-1]
        loss = -float(np.mean(q)) + cfg.action_l2 * float(np.mean(pre**2))
        _, grad_in = self.critic.backward(ccache, np.full((n, 1), -1.0 / n))
        grad_a = grad_in[:, -self.spec.action_dim:]
        bc_loss = 0.0
        if demo_unit is not None and cfg.bc_weight > 0 and np.any(demo_mask):
            m = demo_mask.astype(np.float64)[:, None]
            diff = (a - demo_unit) * m
            bc_loss = cfg.bc_weight * float(np.sum(diff**2)) / n
            grad_a = grad_a + cfg.bc_weight * 2.0 * diff / n
            loss += bc_loss
        grad_pre = cfg.action_l2 * 2.0 * pre / pre.size
        grads, _ = self.actor.backward(acache, grad_a, grad_pre_out=grad_pre)
        return loss, grads, bc_loss

    def update(self, batch, rewards, q_bounds):
        """One critic step and one actor step on ``batch`` with the given (already mixed) rewards."""
        rewards = np.asarray(rewards, dtype=np.float64)
        y = self.critic_targets(batch, rewards, q_bounds)
        x = self.inputs(batch.states, batch.desired_goals)
        actions_unit = self.unit_action(batch.actions)
        critic_loss, critic_grads = self.critic_loss_and_grads(x, actions_unit, y)
        demo_mask = None
        n_filtered = 0
        if self.config.bc_weight > 0 and np.any(batch.is_expert):
            demo_mask = batch.is_expert.copy()
            if self.config.q_filter:
                q_demo = self.critic.forward(np.concatenate([x, actions_unit], axis=1))[:, 0]
                q_pi = self.critic.forward(np.concatenate([x, self.actor.forward(x)], axis=1))[:, 0]
                demo_mask &= q_demo >= q_pi
            n_filtered = int(demo_mask.sum())
        actor_loss, actor_grads, bc_loss = self.actor_loss_and_grads(x, actions_unit, demo_mask)
        if not (np.isfinite(critic_loss) and np.isfinite(actor_loss)):
            raise NonFiniteError(f"non-finite loss: critic={critic_loss} actor={actor_loss}")
        self.critic_opt.step(critic_grads)
        self.actor_opt.step(actor_grads)
        return {
            "critic_loss": critic_loss,
            "actor_loss": actor_loss,
            "bc_loss": bc_loss,
            "bc_samples": n_filtered,
            "target_mean": float(np.mean(y)),
        }

    def soft_update(self, tau=None):
        tau = self.config.polyak if tau is None else tau
        soft_update(self.actor, self.actor_target, tau)
        soft_update(self.critic, self.critic_target, tau)

    # -- persistence ------------------------------------------------------

    def state_arrays(self):
        out = {}
        for name in ("actor", "critic", "actor_target", "critic_target"):
            out.update(net_arrays(getattr(self, name), f"{name}."))
        out.update(adam_arrays(self.actor_opt.state, "actor_opt."))
        out.update(adam_arrays(self.critic_opt.state, "critic_opt."))
        for name in ("state_norm", "goal_norm"):
            for k, v in getattr(self, name).state_arrays().items():
                out[f"{name}.{k}"] = v
        return out

    def load_arrays(self, arrays):
        for name in ("actor", "critic", "actor_target", "critic_target"):
            setattr(self, name, net_from_arrays(arrays, f"{name}."))
        self.actor_opt.net = self.actor
        self.critic_opt.net = self.critic
        self.actor_opt.state = adam_from_arrays(arrays, "actor_opt.", len(self.actor.params()))
        self.critic_opt.state = adam_from_arrays(arrays, "critic_opt.", len(self.critic.params()))
        for name in ("state_norm", "goal_norm"):
            getattr(self, name).load_arrays(
                {k: arrays[f"{name}.{k}"] for k in ("sum", "sumsq", "count", "mean", "std")}
            )

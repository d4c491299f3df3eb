"""Small fixtures shared by several test modules."""

import numpy as np

from goalsagail.replay import Trajectory


def random_trajectory(env, rng, source="agent"):
    state, ag, goal = env.reset(rng)
    states, ags, actions, rewards = [state], [ag], [], []
    for _ in range(env.spec.horizon):
        a = env.clip_action(rng.uniform(-1, 1, size=env.spec.action_dim))
        step = env.step(a)
        states.append(step.next_state)
        ags.append(step.achieved_goal)
        actions.append(a)
        rewards.append(step.reward)
    return Trajectory(np.array(states), np.array(actions), np.array(ags), goal, np.array(rewards), source=source)


def trajectories(env, n, seed=0, source="agent"):
    rng = np.random.default_rng(seed)
    return [random_trajectory(env, rng, source) for _ in range(n)]


def _far_point(space, g_d):
    if space.metric == "angular":
        return g_d + 1.0
    if space.dimension > 1 and np.all(np.isin(g_d, (0.0, 1.0))):
        return 1.0 - g_d  # bit strings: flip every bit
    return g_d + 10.0 * space.tolerance


def synthetic_trajectory(spec, g_init, g_d, steps_at_goal, source="agent"):
    """Goal-consistent trajectory with an exact return of ``steps_at_goal - T``.

    States and actions are zeros; only the achieved goals and rewards matter
    to buffers and admission.
    """
    T = spec.horizon
    g_init = np.asarray(g_init, dtype=np.float64)
    g_d = np.asarray(g_d, dtype=np.float64)
    ags = np.repeat(_far_point(spec.goal_space, g_d)[None], T + 1, axis=0)
    ags[0] = g_init
    if steps_at_goal:
        ags[T + 1 - steps_at_goal:] = g_d
    rewards = spec.goal_space.reward(ags[1:], g_d)
    return Trajectory(np.zeros((T + 1, spec.state_dim)), np.zeros((T, spec.action_dim)), ags, g_d, rewards,
                      source=source)


def random_admission_instance(rng, make_env, ExpertBuffer):
    """Random (trajectory, expert buffer) pair biased towards ties and threshold-boundary cases.

    Returns ``(env, buffer, entries, traj, c_comb, require_success)`` where
    ``entries`` is an independently maintained FIFO list of
    ``(insert_id, g_init, g_d, return)``.
    """
    env_id = ("bitflip8", "pointpush2d", "planarrotate")[int(rng.integers(3))]
    env = make_env(env_id)
    spec = env.spec
    T = spec.horizon

    if env_id == "bitflip8":
        patterns = rng.integers(0, 2, size=(4, 8)).astype(np.float64)

        def goal():
            return patterns[rng.integers(len(patterns))].copy()

        c_comb = float(rng.choice([1.0, np.sqrt(2.0), 2.0, 3.0]))
    elif env_id == "pointpush2d":
        anchors = rng.uniform(0.05, 0.95, size=(5, 2))

        def goal():
            g = anchors[rng.integers(len(anchors))].copy()
            if rng.random() < 0.5:
                g += rng.normal(scale=0.01, size=2)
            return g

        c_comb = float(rng.uniform(0.005, 0.08))
    else:
        anchors = rng.uniform(-np.pi, np.pi, size=(5, 1))

        def goal():
            g = anchors[rng.integers(len(anchors))].copy()
            if rng.random() < 0.5:
                g += rng.normal(scale=0.1, size=1)
            return g

        c_comb = float(rng.uniform(0.05, 0.6))

    def steps():
        return int(rng.choice([0, 1, 2, T // 2, T]))

    capacity = int(rng.integers(1, 10))
    buf = ExpertBuffer(spec, capacity)
    entries = []
    for i in range(int(rng.integers(0, 16))):
        k = max(1, steps())
        t = synthetic_trajectory(spec, goal(), goal(), k, source="demo_seed")
        buf.push(t)
        entries.append((i, t.achieved_goals[0], t.desired_goal, t.episode_return))
        if len(entries) > capacity:
            entries.pop(0)
    traj = synthetic_trajectory(spec, goal(), goal(), steps())
    return env, buf, entries, traj, c_comb, bool(rng.random() < 0.8)

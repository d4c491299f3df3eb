"""Goal-pair based admission of self-generated trajectories into the expert buffer."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ADMIT_DIRECT = "admit_direct"
ADMIT_BETTER = "admit_better"
REJECT = "reject"


@dataclass(frozen=True)
class AdmissionConfig:
    c_comb: float
    require_success: bool = True

    def __post_init__(self):
        if not self.c_comb > 0:
            raise ValueError("c_comb must be positive")


@dataclass(frozen=True)
class AdmissionVerdict:
    decision: str
    matched_slot: int | None
    d_min: float

    @property
    def admitted(self):
        return self.decision != REJECT


def combined_distance(gp_i, gp_e, space):
    """Init-goal distance plus desired-goal distance between two goal pairs."""
    return float(space.distance(gp_i.g_init, gp_e.g_init) + space.distance(gp_i.g_d, gp_e.g_d))


def find_most_similar(goal_pair, expert_buffer, space):
    """Closest expert trajectory by combined goal-pair distance.

    Returns ``(slot, d_min)``; ties go to the earliest-inserted entry. An empty
    buffer returns ``(None, inf)``.
    """
    if not len(expert_buffer):
        return None, math.inf
    slots, g_init, g_d = expert_buffer.goal_pairs()
    d = space.distance(g_init, goal_pair.g_init) + space.distance(g_d, goal_pair.g_d)
    i = int(np.argmin(d))  # first occurrence == oldest, since slots are oldest-first
    return int(slots[i]), float(d[i])


def decide_admission(traj, expert_buffer, space, config):
    """Route one finished trajectory.

    Unsuccessful trajectories (when success is required) are rejected without
    a match and carry ``d_min = nan``. Otherwise a trajectory whose nearest
    expert lies farther than ``c_comb`` is admitted directly; a nearby one is
    admitted only if its return strictly exceeds the matched expert's.
    """
    if config.require_success and not traj.succeeded:
        return AdmissionVerdict(REJECT, None, math.nan)
    slot, d_min = find_most_similar(traj.goal_pair, expert_buffer, space)
    if slot is None or d_min > config.c_comb:
        return AdmissionVerdict(ADMIT_DIRECT, slot, d_min)
    if traj.episode_return > expert_buffer.returns[slot]:
        return AdmissionVerdict(ADMIT_BETTER, slot, d_min)
    return AdmissionVerdict(REJECT, slot, d_min)


@dataclass
class AdmissionStats:
    admit_direct: int = 0
    admit_better: int = 0
    reject: int = 0
    d_min_sum: float = 0.0
    d_min_count: int = 0

    def record(self, verdict):
        setattr(self, verdict.decision, getattr(self, verdict.decision) + 1)
        if math.isfinite(verdict.d_min):
            self.d_min_sum += verdict.d_min
            self.d_min_count += 1

    @property
    def mean_d_min(self):
        return self.d_min_sum / self.d_min_count if self.d_min_count else float("nan")

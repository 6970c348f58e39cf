"""Dec-POMDP contracts shared by every other module.

Trajectories, batches and critic outputs are immutable value objects.
Observation arrays are stored read-only so a trajectory can be handed to
several rollout workers or critics without copying.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DomainError, ShapeError, UsageError


class EnvKind(str, enum.Enum):
    MATRIX = "matrix"
    SPACEWORLD = "spaceworld"
    FORAGING = "foraging"
    WAREHOUSE = "warehouse"


class CreditSource(str, enum.Enum):
    SHARED = "shared"
    ORACLE = "oracle"
    LLM_MCA = "llm_mca"
    LLM_TACA = "llm_taca"


def _frozen_array(values, ndim=None):
    array = np.array(values, dtype=np.float64)
    if ndim is not None and array.ndim != ndim:
        raise ShapeError(
            "Expected a {}-dimensional array, got shape {}".format(
                ndim, array.shape))
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class EnvSpec:
    num_agents: int
    obs_dim_per_agent: int
    action_count_per_agent: int
    max_episode_steps: int
    env_kind: EnvKind

    def __post_init__(self):
        if self.num_agents < 1:
            raise DomainError("num_agents must be at least 1")
        if self.obs_dim_per_agent < 1:
            raise DomainError("obs_dim_per_agent must be positive")
        if self.action_count_per_agent < 2:
            raise DomainError("action_count_per_agent must be at least 2")
        if self.max_episode_steps < 1:
            raise DomainError("max_episode_steps must be at least 1")
        object.__setattr__(self, "env_kind", EnvKind(self.env_kind))


@dataclass(frozen=True, eq=False)
class TimeStep:
    """One joint transition: ``o_k``, ``a_k`` and ``r_k``.

    ``joint_obs`` is an ``N x obs_dim`` array holding each agent's
    observation *before* ``joint_action`` was taken.
    """

    joint_obs: np.ndarray
    joint_action: Tuple[int, ...]
    global_reward: float
    done: bool = False

    def __post_init__(self):
        obs = _frozen_array(self.joint_obs, ndim=2)
        action = tuple(int(a) for a in self.joint_action)
        if obs.shape[0] != len(action):
            raise ShapeError(
                "joint_obs has {} rows but joint_action has {} entries".format(
                    obs.shape[0], len(action)))
        if any(a < 0 for a in action):
            raise DomainError("Action indices must be non-negative")
        object.__setattr__(self, "joint_obs", obs)
        object.__setattr__(self, "joint_action", action)
        object.__setattr__(self, "global_reward", float(self.global_reward))
        object.__setattr__(self, "done", bool(self.done))

    @property
    def num_agents(self):
        return len(self.joint_action)

    def __eq__(self, other):
        if not isinstance(other, TimeStep):
            return NotImplemented
        return (self.joint_action == other.joint_action
                and self.global_reward == other.global_reward
                and self.done == other.done
                and np.array_equal(self.joint_obs, other.joint_obs))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """An ordered episode of :class:`TimeStep` values.

    ``final_obs`` is the joint observation returned by the last step; it
    is ``o_{K}`` for shaping and bootstrapping purposes.
    """

    steps: Tuple[TimeStep, ...]
    seed: int
    env_kind: EnvKind
    final_obs: Optional[np.ndarray] = None
    max_episode_steps: Optional[int] = None

    def __post_init__(self):
        steps = tuple(self.steps)
        for index, step in enumerate(steps):
            if step.done and index != len(steps) - 1:
                raise UsageError(
                    "Step {} follows a terminal step".format(index + 1))
        if len({step.num_agents for step in steps}) > 1:
            raise ShapeError("Steps disagree on the number of agents")
        if (self.max_episode_steps is not None
                and len(steps) > self.max_episode_steps):
            raise DomainError(
                "Trajectory has {} steps, limit is {}".format(
                    len(steps), self.max_episode_steps))
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "env_kind", EnvKind(self.env_kind))
        if self.final_obs is not None:
            object.__setattr__(
                self, "final_obs", _frozen_array(self.final_obs, ndim=2))

    def __len__(self):
        return len(self.steps)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        if self.final_obs is None or other.final_obs is None:
            same_final = self.final_obs is None and other.final_obs is None
        else:
            same_final = np.array_equal(self.final_obs, other.final_obs)
        return (self.seed == other.seed
                and self.env_kind == other.env_kind
                and self.steps == other.steps
                and same_final)

    @property
    def num_agents(self):
        if self.steps:
            return self.steps[0].num_agents
        if self.final_obs is not None:
            return self.final_obs.shape[0]
        return 0

    @property
    def rewards(self):
        return np.array([step.global_reward for step in self.steps])

    @property
    def actions(self):
        """``K x N`` integer array of joint actions."""
        return np.array([step.joint_action for step in self.steps],
                        dtype=np.int64).reshape(len(self.steps), -1)

    def next_obs(self, k):
        """The joint observation following step ``k``."""
        if k + 1 < len(self.steps):
            return self.steps[k + 1].joint_obs
        if self.final_obs is None:
            raise UsageError("Trajectory has no final observation")
        return self.final_obs


@dataclass(frozen=True)
class EpisodeBatch:
    trajectories: Tuple[Trajectory, ...]
    batch_id: int = 0

    def __post_init__(self):
        trajectories = tuple(self.trajectories)
        if len({t.env_kind for t in trajectories}) > 1:
            raise ShapeError("Batch mixes environment kinds")
        if len({t.num_agents for t in trajectories}) > 1:
            raise ShapeError("Batch mixes agent counts")
        object.__setattr__(self, "trajectories", trajectories)

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def env_kind(self):
        return self.trajectories[0].env_kind if self.trajectories else None

    @property
    def num_agents(self):
        return self.trajectories[0].num_agents if self.trajectories else 0

    @property
    def total_steps(self):
        return sum(len(t) for t in self.trajectories)


@dataclass(frozen=True, eq=False)
class CreditMatrix:
    """Per-agent per-timestep credits ``c_k^i`` as an ``N x K`` array."""

    values: np.ndarray
    source: CreditSource = CreditSource.SHARED

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, ndim=2))
        object.__setattr__(self, "source", CreditSource(self.source))

    @property
    def shape(self):
        return self.values.shape

    @property
    def num_agents(self):
        return self.values.shape[0]

    @property
    def length(self):
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, CreditMatrix):
            return NotImplemented
        return (self.source == other.source
                and self.values.shape == other.values.shape
                and np.array_equal(self.values, other.values))


TaskVector = Tuple[int, ...]


@dataclass(frozen=True)
class TaskAssignmentMatrix:
    """``N x K`` grid of optional integer task vectors ``t_k^i``."""

    entries: Tuple[Tuple[Optional[TaskVector], ...], ...]
    d_task: int

    def __post_init__(self):
        if self.d_task < 1:
            raise DomainError("d_task must be at least 1")
        rows = []
        for row in self.entries:
            cells = []
            for entry in row:
                if entry is not None:
                    entry = tuple(int(v) for v in entry)
                    if len(entry) != self.d_task:
                        raise ShapeError(
                            "Task vector {} does not have width {}".format(
                                entry, self.d_task))
                cells.append(entry)
            rows.append(tuple(cells))
        if len({len(row) for row in rows}) > 1:
            raise ShapeError("Task rows have unequal lengths")
        object.__setattr__(self, "entries", tuple(rows))

    @classmethod
    def absent(cls, num_agents, length, d_task):
        return cls(tuple((None,) * length for _ in range(num_agents)), d_task)

    @property
    def num_agents(self):
        return len(self.entries)

    @property
    def length(self):
        return len(self.entries[0]) if self.entries else 0

    def get(self, agent, step):
        return self.entries[agent][step]

    def present_count(self):
        return sum(entry is not None for row in self.entries for entry in row)

    def forward_filled(self, initial=None):
        """``N x K x d_task`` array where each assignment persists until
        the next one for the same agent; zeros before the first."""
        out = np.zeros((self.num_agents, self.length, self.d_task))
        for i, row in enumerate(self.entries):
            current = initial[i] if initial is not None else None
            for k, entry in enumerate(row):
                if entry is not None:
                    current = entry
                if current is not None:
                    out[i, k] = current
        return out

    def split(self, lengths):
        """Split the columns into consecutive per-episode matrices."""
        if sum(lengths) != self.length:
            raise ShapeError("Episode lengths do not sum to {}".format(
                self.length))
        parts = []
        start = 0
        for length in lengths:
            parts.append(TaskAssignmentMatrix(
                tuple(row[start:start + length] for row in self.entries),
                self.d_task))
            start += length
        return parts


def episode_return(traj: Trajectory) -> float:
    """Undiscounted sum of global rewards over the episode."""
    if len(traj) == 0:
        raise DomainError("Cannot compute the return of an empty trajectory")
    return math.fsum(step.global_reward for step in traj.steps)


def per_agent_surrogate_return(traj: Trajectory,
                               credits: CreditMatrix) -> np.ndarray:
    """Each agent's sum of credits, the quantity it maximises instead of
    :func:`episode_return`."""
    n, k = credits.shape
    if k != len(traj):
        raise ShapeError("Credit length {} does not match trajectory "
                         "length {}".format(k, len(traj)))
    if traj.num_agents and n != traj.num_agents:
        raise ShapeError("Credit rows {} do not match {} agents".format(
            n, traj.num_agents))
    return np.array([math.fsum(row) for row in credits.values])


def shared_credit_matrix(traj: Trajectory) -> CreditMatrix:
    rewards = traj.rewards
    return CreditMatrix(np.tile(rewards, (traj.num_agents, 1)),
                        CreditSource.SHARED)


def validate_credit_matrix(
        credits: Union[CreditMatrix, Sequence[CreditMatrix]],
        batch: EpisodeBatch) -> list:
    """Check credits against the batch they annotate.

    :returns: a list of violation messages; empty when valid.
    """
    if isinstance(credits, CreditMatrix):
        credits = [credits]
    credits = list(credits)
    violations = []
    if len(credits) != len(batch):
        violations.append("trajectory count mismatch: {} credit matrices "
                          "for {} trajectories".format(
                              len(credits), len(batch)))
    for e, (matrix, traj) in enumerate(zip(credits, batch.trajectories)):
        n, k = matrix.shape
        if n != traj.num_agents:
            violations.append("wrong agent count in episode {}: expected {} "
                              "got {}".format(e + 1, traj.num_agents, n))
        if k != len(traj):
            violations.append("length mismatch in episode {}: expected {} "
                              "got {}".format(e + 1, len(traj), k))
        bad = np.argwhere(~np.isfinite(matrix.values))
        for i, col in bad:
            violations.append("non-finite at ({},{})".format(int(i), int(col)))
    return violations

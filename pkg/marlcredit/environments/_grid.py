"""Shared grid-world plumbing: the environment base class, direction
tables and simultaneous move resolution."""

from __future__ import annotations

import abc
import logging

import numpy as np

from ..core import EnvSpec
from ..exceptions import DomainError, UsageError


log = logging.getLogger(__name__)

# (row, column) deltas; row 0 is the top of a rendered grid.
MOVES = {
    "N": (-1, 0),
    "S": (1, 0),
    "E": (0, 1),
    "W": (0, -1),
}


def manhattan(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def in_bounds(cell, height, width=None):
    width = height if width is None else width
    return 0 <= cell[0] < height and 0 <= cell[1] < width


def move_target(cell, action_name, height, width=None):
    """Cell an agent tries to enter; walls leave it in place."""
    delta = MOVES.get(action_name)
    if delta is None:
        return tuple(cell)
    target = (cell[0] + delta[0], cell[1] + delta[1])
    if not in_bounds(target, height, width):
        return tuple(cell)
    return target


def resolve_moves(positions, targets, blocked=frozenset()):
    """Resolve simultaneous moves.

    Agents whose target is blocked, shared with another agent, a swap
    with another agent, or held by an agent that ends up not moving all
    stay where they are. No agent index wins a tie.

    :returns: the list of final positions.
    """
    positions = [tuple(p) for p in positions]
    final = [tuple(t) for t in targets]
    for i, target in enumerate(final):
        if target != positions[i] and target in blocked:
            final[i] = positions[i]
    changed = True
    while changed:
        changed = False
        claims = {}
        for i, target in enumerate(final):
            claims.setdefault(target, []).append(i)
        for i, target in enumerate(final):
            if target == positions[i]:
                continue
            contested = len(claims[target]) > 1
            swap = any(final[j] == positions[i] and positions[j] == target
                       for j in range(len(final)) if j != i)
            if contested or swap:
                for j in claims[target]:
                    if final[j] != positions[j]:
                        final[j] = positions[j]
                final[i] = positions[i]
                changed = True
                break
    return final


class MultiAgentEnv(abc.ABC):
    """Seeded, single-owner environment.

    Subclasses keep their state in :attr:`state` (a dataclass) so tests
    and critics can inspect or install it with :meth:`load_state`.
    """

    action_names = ()

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.state = None
        self._done = True
        self._rng = np.random.default_rng(0)

    @property
    def num_agents(self):
        return self.spec.num_agents

    @property
    def done(self):
        return self._done

    @property
    @abc.abstractmethod
    def scenario_name(self):
        """Human readable scenario name in the benchmark naming grammar."""

    @abc.abstractmethod
    def reset(self, seed):
        """Start an episode and return the joint observation."""

    @abc.abstractmethod
    def _step(self, joint_action):
        """Advance the state; return ``(reward, done)``."""

    @abc.abstractmethod
    def observe(self):
        """``N x obs_dim`` joint observation of the current state."""

    @abc.abstractmethod
    def render(self):
        """Text grid dump of the current state."""

    def prompt_context(self):
        """Values the prompt templates are parameterised with."""
        return {"num_agents": self.num_agents,
                "max_steps": self.spec.max_episode_steps,
                "scenario": self.scenario_name}

    def load_state(self, state):
        self.state = state
        self._done = False

    def step(self, joint_action):
        if self._done:
            raise UsageError("step() called on a finished episode; "
                             "call reset() first")
        joint_action = self._check_actions(joint_action)
        reward, done = self._step(joint_action)
        self._done = bool(done)
        return self.observe(), float(reward), self._done

    def _check_actions(self, joint_action):
        joint_action = tuple(int(a) for a in joint_action)
        if len(joint_action) != self.num_agents:
            raise DomainError("Expected {} actions, got {}".format(
                self.num_agents, len(joint_action)))
        for action in joint_action:
            if not 0 <= action < self.spec.action_count_per_agent:
                raise DomainError("Action {} out of range [0, {})".format(
                    action, self.spec.action_count_per_agent))
        return joint_action

    def _begin(self, seed):
        self._rng = np.random.default_rng(seed)
        self._done = False
        return self._rng

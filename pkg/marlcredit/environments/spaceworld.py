"""Spaceworld: two servicing robots carry colour-matched mirror segments to
their targets without ever entering the same cell.

Agent ``i`` is colour-matched to mirror ``i`` and target ``i``. Either
agent may still pick up and move either mirror.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..core import EnvKind, EnvSpec
from ..exceptions import ConfigError
from ._grid import MultiAgentEnv, manhattan, move_target


log = logging.getLogger(__name__)

ACTION_NAMES = ("N", "S", "E", "W", "stay", "interact")
INTERACT = ACTION_NAMES.index("interact")
STAY = ACTION_NAMES.index("stay")
MAX_REWARD = 10.0
LIMIT_SLACK = 10
EXACT_PLAN_MAX_GRID = 5
SEARCH_EXPANSION_LIMIT = 500000
OBS_DIM = 16

Cell = Tuple[int, int]


@dataclass
class SpaceworldState:
    grid_size: int
    agent_pos: List[Cell]
    mirror_pos: List[Cell]
    target_pos: Tuple[Cell, Cell]
    carrying: List[Optional[int]] = field(default_factory=lambda: [None, None])
    step_count: int = 0
    t_min: int = 0
    t_limit: int = LIMIT_SLACK
    collided: bool = False

    def copy(self):
        return SpaceworldState(
            self.grid_size, list(self.agent_pos), list(self.mirror_pos),
            tuple(self.target_pos), list(self.carrying), self.step_count,
            self.t_min, self.t_limit, self.collided)


def intended_cells(grid_size, agent_pos, joint_action):
    return [move_target(pos, ACTION_NAMES[action], grid_size)
            for pos, action in zip(agent_pos, joint_action)]


def collision_agents(grid_size, agent_pos, joint_action):
    """Agents whose move caused a collision this step (empty if none).

    Entering the same cell and swapping cells both count; an agent that
    did not leave its cell is never blamed.
    """
    targets = intended_cells(grid_size, agent_pos, joint_action)
    a, b = (tuple(p) for p in agent_pos)
    if targets[0] == targets[1] or (targets[0] == b and targets[1] == a):
        return tuple(i for i in range(2) if targets[i] != tuple(agent_pos[i]))
    return ()


def transition(grid_size, agent_pos, mirror_pos, carrying, joint_action):
    """Pure joint transition shared by the environment and plan search.

    :returns: ``(agent_pos, mirror_pos, carrying, colliders)``; on a
        collision the positions are returned unchanged.
    """
    colliders = collision_agents(grid_size, agent_pos, joint_action)
    if colliders:
        return list(agent_pos), list(mirror_pos), list(carrying), colliders
    agents = [tuple(p) for p in agent_pos]
    mirrors = [tuple(p) for p in mirror_pos]
    carrying = list(carrying)
    for i, action in enumerate(joint_action):
        if action != INTERACT:
            continue
        here = agents[i]
        resting = [m for m in range(2)
                   if mirrors[m] == here and m not in carrying]
        if carrying[i] is not None:
            if not resting:
                carrying[i] = None
        elif resting:
            carrying[i] = resting[0]
    targets = intended_cells(grid_size, agents, joint_action)
    for i in range(2):
        agents[i] = targets[i]
        if carrying[i] is not None:
            mirrors[carrying[i]] = agents[i]
    return agents, mirrors, carrying, ()


def is_complete(mirror_pos, target_pos, carrying):
    return all(tuple(mirror_pos[m]) == tuple(target_pos[m])
               and m not in carrying for m in range(2))


def agent_task_distance(state, agent):
    """Remaining steps for ``agent`` to deliver its own mirror alone.

    Used both by the closed-form ``t_min`` and as the shaping potential.
    """
    mirror = tuple(state.mirror_pos[agent])
    target = tuple(state.target_pos[agent])
    pos = tuple(state.agent_pos[agent])
    if state.carrying[agent] == agent:
        return manhattan(pos, target) + 1
    if mirror == target and agent not in state.carrying:
        return 0
    return manhattan(pos, mirror) + 1 + manhattan(mirror, target) + 1


def minimal_steps_formula(state):
    return max(agent_task_distance(state, i) for i in range(2))


def _plan_heuristic(agents, mirrors, carrying, targets):
    bound = 0
    for m in range(2):
        if m in carrying:
            cost = manhattan(mirrors[m], targets[m]) + 1
        elif mirrors[m] == targets[m]:
            cost = 0
        else:
            cost = (min(manhattan(a, mirrors[m]) for a in agents) + 1
                    + manhattan(mirrors[m], targets[m]) + 1)
        bound = max(bound, cost)
    return bound


def _agent_options(grid_size, pos, mirrors, carrying, agent):
    options = [STAY]
    seen = {tuple(pos)}
    for index, name in enumerate(ACTION_NAMES[:4]):
        target = move_target(pos, name, grid_size)
        if target not in seen:
            seen.add(target)
            options.append(index)
    resting = any(mirrors[m] == pos and m not in carrying for m in range(2))
    if (carrying[agent] is None) == resting:
        options.append(INTERACT)
    return options


def joint_plan_search(state, expansion_limit=SEARCH_EXPANSION_LIMIT):
    """Exact number of joint steps needed to place both mirrors.

    A* over the joint state space with an admissible, consistent
    heuristic; collisions are never expanded. Returns ``None`` if the
    expansion limit is hit.
    """
    grid = state.grid_size
    targets = tuple(tuple(t) for t in state.target_pos)
    start = (tuple(tuple(p) for p in state.agent_pos),
             tuple(tuple(p) for p in state.mirror_pos),
             tuple(state.carrying))
    best = {start: 0}
    counter = itertools.count()
    heap = [(_plan_heuristic(*start, targets), 0, next(counter), start)]
    expansions = 0
    while heap:
        _, neg_g, _, node = heapq.heappop(heap)
        g = -neg_g
        if g > best.get(node, g):
            continue
        agents, mirrors, carrying = node
        if is_complete(mirrors, targets, carrying):
            return g
        expansions += 1
        if expansions > expansion_limit:
            log.warning("Plan search gave up after %d expansions",
                        expansion_limit)
            return None
        options = [_agent_options(grid, agents[i], mirrors, carrying, i)
                   for i in range(2)]
        for joint in itertools.product(*options):
            new_agents, new_mirrors, new_carrying, colliders = transition(
                grid, agents, mirrors, carrying, joint)
            if colliders:
                continue
            child = (tuple(new_agents), tuple(new_mirrors),
                     tuple(new_carrying))
            if g + 1 < best.get(child, g + 2):
                best[child] = g + 1
                f = g + 1 + _plan_heuristic(*child, targets)
                heapq.heappush(heap, (f, -(g + 1), next(counter), child))
    return None


def spaceworld_minimal_steps(state, exact_max_grid=EXACT_PLAN_MAX_GRID):
    """Minimal joint steps to complete the episode from ``state``.

    Small grids are solved exactly with :func:`joint_plan_search`; larger
    grids use the colour-matched closed form.
    """
    if state.grid_size <= exact_max_grid:
        steps = joint_plan_search(state)
        if steps is not None:
            return steps
    return minimal_steps_formula(state)


def make_state(grid_size, agent_pos, mirror_pos, target_pos,
               exact_max_grid=EXACT_PLAN_MAX_GRID):
    """Build a fresh episode state from explicit placements."""
    cells = [tuple(c) for c in list(agent_pos) + list(mirror_pos)
             + list(target_pos)]
    if len(set(cells)) != 6:
        raise ConfigError("Spaceworld placements must be 6 distinct cells")
    if any(not (0 <= r < grid_size and 0 <= c < grid_size) for r, c in cells):
        raise ConfigError("Spaceworld placement outside the grid")
    state = SpaceworldState(grid_size, cells[0:2], cells[2:4],
                            tuple(cells[4:6]))
    state.t_min = spaceworld_minimal_steps(state, exact_max_grid)
    state.t_limit = state.t_min + LIMIT_SLACK
    return state


def completion_reward(steps, t_min, t_limit):
    reward = MAX_REWARD * (t_limit - steps) / (t_limit - t_min)
    return min(MAX_REWARD, max(0.0, reward))


def decode_observation(row):
    """Recover absolute positions and carrying flags from one agent's
    observation row (the inverse of :meth:`Spaceworld.observe`)."""
    row = np.asarray(row)
    own = (int(row[0]), int(row[1]))

    def absolute(offset):
        return (own[0] + int(row[offset]), own[1] + int(row[offset + 1]))

    return {
        "pos": own,
        "own_mirror": absolute(2),
        "own_target": absolute(4),
        "other_pos": absolute(6),
        "other_mirror": absolute(8),
        "other_target": absolute(10),
        "own_carry_own": bool(row[12]),
        "own_carry_other": bool(row[13]),
        "other_carry_own": bool(row[14]),
        "other_carry_other": bool(row[15]),
    }


class Spaceworld(MultiAgentEnv):

    action_names = ACTION_NAMES

    def __init__(self, grid_size=10, exact_max_grid=EXACT_PLAN_MAX_GRID):
        if grid_size < 4:
            raise ConfigError(
                "Spaceworld grid {0}x{0} is too small to place 6 distinct "
                "cells; use at least 4x4".format(grid_size))
        # t_limit = t_min + 10 and t_min <= 4 * grid_size + 2
        super(Spaceworld, self).__init__(EnvSpec(
            num_agents=2,
            obs_dim_per_agent=OBS_DIM,
            action_count_per_agent=len(ACTION_NAMES),
            max_episode_steps=4 * grid_size + 2 + LIMIT_SLACK,
            env_kind=EnvKind.SPACEWORLD,
        ))
        self.grid_size = grid_size
        self.exact_max_grid = exact_max_grid

    @property
    def scenario_name(self):
        return "Spaceworld-{0}x{0}".format(self.grid_size)

    def reset(self, seed=0):
        rng = self._begin(seed)
        flat = rng.choice(self.grid_size * self.grid_size, size=6,
                          replace=False)
        cells = [divmod(int(c), self.grid_size) for c in flat]
        self.state = make_state(self.grid_size, cells[0:2], cells[2:4],
                                cells[4:6], self.exact_max_grid)
        return self.observe()

    def _step(self, joint_action):
        state = self.state
        agents, mirrors, carrying, colliders = transition(
            state.grid_size, state.agent_pos, state.mirror_pos,
            state.carrying, joint_action)
        state.step_count += 1
        if colliders:
            state.collided = True
            log.debug("Collision at step %d caused by agents %s",
                      state.step_count, colliders)
            return 0.0, True
        state.agent_pos, state.mirror_pos, state.carrying = (
            agents, mirrors, carrying)
        if is_complete(mirrors, state.target_pos, carrying):
            return completion_reward(state.step_count, state.t_min,
                                     state.t_limit), True
        return 0.0, state.step_count >= state.t_limit

    def observe(self):
        state = self.state
        rows = []
        for i in range(2):
            j = 1 - i
            own = np.array(state.agent_pos[i])
            features = [own,
                        np.array(state.mirror_pos[i]) - own,
                        np.array(state.target_pos[i]) - own,
                        np.array(state.agent_pos[j]) - own,
                        np.array(state.mirror_pos[j]) - own,
                        np.array(state.target_pos[j]) - own,
                        [state.carrying[i] == i, state.carrying[i] == j,
                         state.carrying[j] == i, state.carrying[j] == j]]
            rows.append(np.concatenate(
                [np.asarray(f, dtype=np.float64) for f in features]))
        return np.stack(rows)

    def render(self):
        state = self.state
        grid = [["." for _ in range(state.grid_size)]
                for _ in range(state.grid_size)]
        for m, symbol in enumerate("AB"):
            r, c = state.target_pos[m]
            grid[r][c] = symbol
        for m, symbol in enumerate("ab"):
            r, c = state.mirror_pos[m]
            grid[r][c] = symbol
        for i, symbol in enumerate("12"):
            r, c = state.agent_pos[i]
            grid[r][c] = symbol
        header = "step {}/{} (t_min {})".format(
            state.step_count, state.t_limit, state.t_min)
        return "\n".join([header] + ["".join(row) for row in grid])

    def prompt_context(self):
        context = super(Spaceworld, self).prompt_context()
        context.update(grid_size=self.grid_size, max_reward="10",
                       limit_slack=LIMIT_SLACK)
        return context

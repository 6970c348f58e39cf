"""Level-based foraging.

Agents and foods carry integer levels. A food is harvested when the
agents next to it that chose ``load`` have a combined level at least the
food's level. Scenario names follow the benchmark grammar
``<G>x<G>-<N>p-<F>f[-<S>s][-c]``, for example ``8x8-2p-2f-c``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..core import EnvKind, EnvSpec
from ..exceptions import ConfigError, ScenarioParseError
from ._grid import MultiAgentEnv, move_target, resolve_moves


log = logging.getLogger(__name__)

ACTION_NAMES = ("N", "S", "E", "W", "stay", "load")
LOAD = ACTION_NAMES.index("load")
LEVEL_CHOICES = (1, 2, 3)
SENTINEL = -1.0

_GRID = re.compile(r"^(\d+)x(\d+)$")
_PLAYERS = re.compile(r"^(\d+)p$")
_FOOD = re.compile(r"^(\d+)f$")
_SIGHT = re.compile(r"^(\d+)s$")
_COOP = ("c", "coop")


@dataclass(frozen=True)
class ForagingConfig:
    grid_size: int
    num_players: int
    num_food: int
    sight_radius: Optional[int] = None
    cooperative: bool = False
    agent_levels: Tuple[int, ...] = ()
    food_levels: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.grid_size < 3:
            raise ConfigError("Foraging grid must be at least 3x3")
        if self.num_players < 1 or self.num_food < 1:
            raise ConfigError("Foraging needs at least one player and food")
        if self.sight_radius is not None and self.sight_radius < 1:
            raise ConfigError("Sight radius must be at least 1")
        if self.cooperative and self.num_players < 2:
            raise ConfigError("Cooperative foraging needs two or more players")
        if self.agent_levels and len(self.agent_levels) != self.num_players:
            raise ConfigError("agent_levels must list one level per player")
        if len(self.food_levels) > self.num_food:
            raise ConfigError("More food levels than food slots")
        if any(v < 1 for v in self.agent_levels + self.food_levels):
            raise ConfigError("Levels must be at least 1")
        if self.cooperative and self.agent_levels and self.food_levels:
            if min(self.food_levels) <= max(self.agent_levels):
                raise ConfigError("Cooperative food must out-level every "
                                  "single agent")

    @property
    def step_cap(self):
        return int(50 * self.grid_size / 8)

    @property
    def scenario_name(self):
        name = "{0}x{0}-{1}p-{2}f".format(
            self.grid_size, self.num_players, self.num_food)
        if self.sight_radius is not None:
            name += "-{}s".format(self.sight_radius)
        if self.cooperative:
            name += "-c"
        return name


def parse_scenario(name, **overrides):
    """Parse ``8x8-2p-2f-c`` style names into a :class:`ForagingConfig`.

    ``overrides`` are passed on to the config (e.g. fixed levels).
    """
    tokens = name.strip().split("-")
    if len(tokens) < 3:
        raise ScenarioParseError(name, name, "expected <G>x<G>-<N>p-<F>f")
    grid = _GRID.match(tokens[0])
    if not grid or grid.group(1) != grid.group(2):
        raise ScenarioParseError(name, tokens[0], "expected a square <G>x<G>")
    players = _PLAYERS.match(tokens[1])
    if not players:
        raise ScenarioParseError(name, tokens[1], "expected <N>p")
    food = _FOOD.match(tokens[2])
    if not food:
        raise ScenarioParseError(name, tokens[2], "expected <F>f")
    sight = None
    cooperative = False
    for index, token in enumerate(tokens[3:], 3):
        match = _SIGHT.match(token)
        if match and sight is None and not cooperative:
            sight = int(match.group(1))
        elif token in _COOP and not cooperative and index == len(tokens) - 1:
            cooperative = True
        else:
            raise ScenarioParseError(name, token)
    try:
        return ForagingConfig(
            grid_size=int(grid.group(1)),
            num_players=int(players.group(1)),
            num_food=int(food.group(1)),
            sight_radius=sight,
            cooperative=cooperative,
            **overrides)
    except ConfigError as exc:
        raise ScenarioParseError(name, name, str(exc))


@dataclass
class ForagingState:
    agent_pos: List[Tuple[int, int]]
    agent_levels: List[int]
    food_pos: List[Tuple[int, int]]
    food_levels: List[int]
    food_alive: List[bool] = field(default_factory=list)
    step_count: int = 0

    @property
    def total_food_level(self):
        return sum(self.food_levels)

    def copy(self):
        return ForagingState(list(self.agent_pos), list(self.agent_levels),
                             list(self.food_pos), list(self.food_levels),
                             list(self.food_alive), self.step_count)


def adjacent(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def _sample_levels(rng, config):
    if config.agent_levels:
        agents = list(config.agent_levels)
    else:
        agents = [int(v) for v in rng.choice(LEVEL_CHOICES,
                                             size=config.num_players)]
    if config.food_levels:
        foods = list(config.food_levels)
    elif config.cooperative:
        top = sorted(agents, reverse=True)
        foods = [int(v) for v in rng.integers(
            top[0] + 1, top[0] + top[1] + 1, size=config.num_food)]
    else:
        cap = sum(agents)
        foods = [min(int(v), cap) for v in rng.choice(
            LEVEL_CHOICES, size=config.num_food)]
    return agents, foods


def _place(rng, config, num_food):
    size = config.grid_size
    interior = [(r, c) for r in range(1, size - 1) for c in range(1, size - 1)]
    foods = []
    for index in rng.permutation(len(interior)):
        cell = interior[int(index)]
        if all(max(abs(cell[0] - f[0]), abs(cell[1] - f[1])) > 1
               for f in foods):
            foods.append(cell)
            if len(foods) == num_food:
                break
    taken = set(foods)
    free = [(r, c) for r in range(size) for c in range(size)
            if (r, c) not in taken]
    if len(free) < config.num_players:
        raise ConfigError("Not enough free cells for {} players".format(
            config.num_players))
    picks = rng.choice(len(free), size=config.num_players, replace=False)
    agents = [free[int(i)] for i in picks]
    return agents, foods


class Foraging(MultiAgentEnv):

    action_names = ACTION_NAMES

    def __init__(self, config: ForagingConfig):
        super(Foraging, self).__init__(EnvSpec(
            num_agents=config.num_players,
            obs_dim_per_agent=3 * (1 + config.num_food
                                   + config.num_players - 1),
            action_count_per_agent=len(ACTION_NAMES),
            max_episode_steps=config.step_cap,
            env_kind=EnvKind.FORAGING,
        ))
        self.config = config

    @property
    def scenario_name(self):
        return self.config.scenario_name

    def reset(self, seed=0):
        rng = self._begin(seed)
        agent_levels, food_levels = _sample_levels(rng, self.config)
        agents, foods = _place(rng, self.config, len(food_levels))
        if len(foods) < len(food_levels):
            log.warning("Only %d of %d foods fit on a %dx%d grid",
                        len(foods), len(food_levels), self.config.grid_size,
                        self.config.grid_size)
            food_levels = food_levels[:len(foods)]
        self.state = ForagingState(agents, agent_levels, foods, food_levels,
                                   [True] * len(foods))
        return self.observe()

    def _step(self, joint_action):
        state = self.state
        size = self.config.grid_size
        targets = [move_target(pos, ACTION_NAMES[a], size)
                   for pos, a in zip(state.agent_pos, joint_action)]
        blocked = frozenset(pos for pos, alive
                            in zip(state.food_pos, state.food_alive) if alive)
        state.agent_pos = resolve_moves(state.agent_pos, targets, blocked)
        state.step_count += 1
        reward = 0.0
        for f, (pos, level) in enumerate(zip(state.food_pos,
                                             state.food_levels)):
            if not state.food_alive[f]:
                continue
            loaders = [i for i, a in enumerate(joint_action)
                       if a == LOAD and adjacent(state.agent_pos[i], pos)]
            if loaders and sum(state.agent_levels[i]
                               for i in loaders) >= level:
                state.food_alive[f] = False
                reward += level / state.total_food_level
                log.debug("Food %d (level %d) harvested by %s", f, level,
                          loaders)
        done = not any(state.food_alive) or \
            state.step_count >= self.config.step_cap
        return reward, done

    def _visible(self, origin, cell):
        sight = self.config.sight_radius
        return sight is None or max(abs(origin[0] - cell[0]),
                                    abs(origin[1] - cell[1])) <= sight

    def observe(self):
        """Per agent: own ``(row, col, level)`` then ``(drow, dcol, level)``
        for every food slot and every other agent, ``-1`` when unseen."""
        state = self.state
        rows = []
        for i, own in enumerate(state.agent_pos):
            row = [own[0], own[1], state.agent_levels[i]]
            for f in range(self.config.num_food):
                if f < len(state.food_pos) and state.food_alive[f] and \
                        self._visible(own, state.food_pos[f]):
                    pos = state.food_pos[f]
                    row += [pos[0] - own[0], pos[1] - own[1],
                            state.food_levels[f]]
                else:
                    row += [SENTINEL] * 3
            for j, other in enumerate(state.agent_pos):
                if j == i:
                    continue
                if self._visible(own, other):
                    row += [other[0] - own[0], other[1] - own[1],
                            state.agent_levels[j]]
                else:
                    row += [SENTINEL] * 3
            rows.append(row)
        return np.array(rows, dtype=np.float64)

    def render(self):
        size = self.config.grid_size
        grid = [["." for _ in range(size)] for _ in range(size)]
        for pos, level, alive in zip(self.state.food_pos,
                                     self.state.food_levels,
                                     self.state.food_alive):
            if alive:
                grid[pos[0]][pos[1]] = str(level)
        for i, pos in enumerate(self.state.agent_pos):
            grid[pos[0]][pos[1]] = chr(ord("A") + i)
        header = "step {}/{} levels {}".format(
            self.state.step_count, self.config.step_cap,
            self.state.agent_levels)
        return "\n".join([header] + ["".join(row) for row in grid])

    def prompt_context(self):
        context = super(Foraging, self).prompt_context()
        sight = self.config.sight_radius
        context.update(
            grid_size=self.config.grid_size,
            num_food=self.config.num_food,
            sight="full" if sight is None else "{} cells".format(sight),
            cooperative="yes" if self.config.cooperative else "no",
        )
        return context


def harvested_foods(obs, next_obs, agent, joint_action, num_food):
    """Food slots agent ``agent`` loaded successfully this step.

    A slot counts when the food was adjacent to the loading agent in
    ``obs`` and is no longer visible in ``next_obs``; loaders never move
    and sight is at least one cell, so disappearance means harvest.
    """
    if joint_action[agent] != LOAD:
        return []
    row, nxt = obs[agent], next_obs[agent]
    slots = []
    for f in range(num_food):
        base = 3 + 3 * f
        level = row[base + 2]
        if level == SENTINEL:
            continue
        if abs(row[base]) + abs(row[base + 1]) != 1:
            continue
        if nxt[base + 2] == SENTINEL:
            slots.append((f, float(level)))
    return slots


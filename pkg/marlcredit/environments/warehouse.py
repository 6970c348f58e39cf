"""Simplified robotic warehouse.

Robots translate in four directions (no rotation). An unloaded robot may
drive under shelves; a loaded one may not enter a cell holding a shelf.
``toggle_load`` lifts the shelf under a robot or sets the carried shelf
down on an empty shelf slot. Bringing a requested shelf onto a
workstation cell delivers it (+1) and a fresh request is drawn.

Layouts are ASCII maps: ``x`` shelf slot (initially stocked), ``g``
workstation, ``.`` floor.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core import EnvKind, EnvSpec
from ..exceptions import ConfigError, ScenarioParseError
from ._grid import MultiAgentEnv, in_bounds, move_target, resolve_moves


log = logging.getLogger(__name__)

ACTION_NAMES = ("N", "S", "E", "W", "stay", "toggle_load")
TOGGLE = ACTION_NAMES.index("toggle_load")
HORIZON = 500
CHANNELS = ("wall", "shelf", "requested", "robot")
OBS_DIM = 9 * len(CHANNELS) + 3

LAYOUTS = {
    "tiny": (
        "xx.xx.xx",
        "xx.xx.xx",
        "........",
        "xx.xx.xx",
        "xx.xx.xx",
        "........",
        "...gg...",
    ),
    "small": (
        "xx.xx.xx.xx",
        "xx.xx.xx.xx",
        "...........",
        "xx.xx.xx.xx",
        "xx.xx.xx.xx",
        "...........",
        "xx.xx.xx.xx",
        "xx.xx.xx.xx",
        "...........",
        "....ggg....",
    ),
    "medium": (
        "xx.xx.xx.xx.xx",
        "xx.xx.xx.xx.xx",
        "..............",
        "xx.xx.xx.xx.xx",
        "xx.xx.xx.xx.xx",
        "..............",
        "xx.xx.xx.xx.xx",
        "xx.xx.xx.xx.xx",
        "..............",
        "xx.xx.xx.xx.xx",
        "xx.xx.xx.xx.xx",
        "..............",
        ".....gggg.....",
    ),
}

_SCENARIO = re.compile(r"^\s*([A-Za-z]+)[\s\-]+(\d+)p\s*$")

Cell = Tuple[int, int]


@dataclass(frozen=True)
class WarehouseLayout:
    name: str
    height: int
    width: int
    shelf_slots: Tuple[Cell, ...]
    workstation_cells: Tuple[Cell, ...]

    @classmethod
    def from_rows(cls, name, rows):
        slots, stations = [], []
        for r, row in enumerate(rows):
            if len(row) != len(rows[0]):
                raise ConfigError("Ragged warehouse layout {!r}".format(name))
            for c, symbol in enumerate(row):
                if symbol == "x":
                    slots.append((r, c))
                elif symbol == "g":
                    stations.append((r, c))
                elif symbol != ".":
                    raise ConfigError(
                        "Unknown layout symbol {!r} in {!r}".format(
                            symbol, name))
        if not slots or not stations:
            raise ConfigError("Layout {!r} needs shelves and a workstation"
                              .format(name))
        return cls(name, len(rows), len(rows[0]), tuple(slots),
                   tuple(stations))


def get_layout(name):
    try:
        return WarehouseLayout.from_rows(name, LAYOUTS[name])
    except KeyError:
        raise ConfigError("Unknown warehouse layout {!r}; choose from {}"
                          .format(name, ", ".join(sorted(LAYOUTS))))


def parse_scenario(name):
    """Parse ``"tiny 2p"`` (or ``"tiny-2p"``) into ``(layout, robots)``."""
    match = _SCENARIO.match(name)
    if not match:
        token = name.strip().split()[-1] if name.strip() else name
        raise ScenarioParseError(name, token,
                                 "expected '<size> <robots>p'")
    layout = match.group(1).lower()
    if layout not in LAYOUTS:
        raise ScenarioParseError(name, match.group(1), "unknown grid size")
    robots = int(match.group(2))
    if robots < 1:
        raise ScenarioParseError(name, match.group(2) + "p",
                                 "need at least one robot")
    return layout, robots


@dataclass
class WarehouseState:
    layout: str
    robot_pos: List[Cell]
    shelf_grid: Dict[Cell, int]
    request_queue: List[int]
    carrying: List[Optional[int]]
    workstation_cells: Tuple[Cell, ...]
    step_count: int = 0
    deliveries: int = 0
    orientation: List[str] = field(default_factory=list)

    def copy(self):
        return WarehouseState(self.layout, list(self.robot_pos),
                              dict(self.shelf_grid), list(self.request_queue),
                              list(self.carrying), self.workstation_cells,
                              self.step_count, self.deliveries,
                              list(self.orientation))


class Warehouse(MultiAgentEnv):

    action_names = ACTION_NAMES

    def __init__(self, layout="tiny", num_robots=2, horizon=HORIZON):
        self.layout = get_layout(layout)
        floor = (self.layout.height * self.layout.width
                 - len(self.layout.shelf_slots))
        if num_robots > floor:
            raise ConfigError("{} robots do not fit on layout {!r}".format(
                num_robots, layout))
        super(Warehouse, self).__init__(EnvSpec(
            num_agents=num_robots,
            obs_dim_per_agent=OBS_DIM,
            action_count_per_agent=len(ACTION_NAMES),
            max_episode_steps=horizon,
            env_kind=EnvKind.WAREHOUSE,
        ))
        self.horizon = horizon

    @property
    def scenario_name(self):
        return "{} {}p".format(self.layout.name, self.num_agents)

    @property
    def queue_size(self):
        return min(self.num_agents, len(self.layout.shelf_slots))

    def reset(self, seed=0):
        rng = self._begin(seed)
        slots = set(self.layout.shelf_slots)
        floor = [(r, c) for r in range(self.layout.height)
                 for c in range(self.layout.width) if (r, c) not in slots]
        picks = rng.choice(len(floor), size=self.num_agents, replace=False)
        shelves = {cell: index
                   for index, cell in enumerate(self.layout.shelf_slots)}
        requests = [int(s) for s in rng.choice(
            len(shelves), size=self.queue_size, replace=False)]
        self.state = WarehouseState(
            layout=self.layout.name,
            robot_pos=[floor[int(i)] for i in picks],
            shelf_grid=shelves,
            request_queue=requests,
            carrying=[None] * self.num_agents,
            workstation_cells=self.layout.workstation_cells,
            orientation=["N"] * self.num_agents,
        )
        return self.observe()

    def _refill_requests(self):
        """Top the queue up to ``queue_size`` from shelves that are neither
        requested nor carried; it stays short while none are left."""
        state = self.state
        carried = set(state.carrying)
        while len(state.request_queue) < self.queue_size:
            candidates = [s for s in range(len(self.layout.shelf_slots))
                          if s not in state.request_queue
                          and s not in carried]
            if not candidates:
                log.debug("No free shelf to request; queue at %d/%d",
                          len(state.request_queue), self.queue_size)
                return
            state.request_queue.append(int(self._rng.choice(candidates)))

    def _step(self, joint_action):
        state = self.state
        slots = set(self.layout.shelf_slots)
        for i, action in enumerate(joint_action):
            if action != TOGGLE:
                continue
            pos = state.robot_pos[i]
            if state.carrying[i] is None:
                if pos in state.shelf_grid:
                    state.carrying[i] = state.shelf_grid.pop(pos)
            elif pos in slots and pos not in state.shelf_grid:
                state.shelf_grid[pos] = state.carrying[i]
                state.carrying[i] = None
        targets = []
        for i, (pos, action) in enumerate(zip(state.robot_pos, joint_action)):
            name = ACTION_NAMES[action]
            target = move_target(pos, name, self.layout.height,
                                 self.layout.width)
            if state.carrying[i] is not None and target in state.shelf_grid:
                target = pos
            if target != pos:
                state.orientation[i] = name
            targets.append(target)
        state.robot_pos = resolve_moves(state.robot_pos, targets)
        state.step_count += 1
        reward = 0.0
        for i, shelf in enumerate(state.carrying):
            if shelf in state.request_queue and \
                    state.robot_pos[i] in state.workstation_cells:
                state.request_queue.remove(shelf)
                self._refill_requests()
                state.deliveries += 1
                reward += 1.0
                log.debug("Robot %d delivered shelf %d", i, shelf)
        self._refill_requests()
        return reward, state.step_count >= self.horizon

    def observe(self):
        """Per robot: 3x3 window of (wall, shelf, requested, robot)
        channels, then a carrying flag (0 none, 1 shelf, 2 requested
        shelf) and the robot's own position."""
        state = self.state
        requested = set(state.request_queue)
        occupied = {}
        for j, pos in enumerate(state.robot_pos):
            occupied[pos] = j
        rows = []
        for i, (r0, c0) in enumerate(state.robot_pos):
            window = np.zeros((3, 3, len(CHANNELS)))
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    cell = (r0 + dr, c0 + dc)
                    slot = window[dr + 1, dc + 1]
                    if not in_bounds(cell, self.layout.height,
                                     self.layout.width):
                        slot[0] = 1.0
                        continue
                    shelf = state.shelf_grid.get(cell)
                    if shelf is not None:
                        slot[1] = 1.0
                        slot[2] = float(shelf in requested)
                    if occupied.get(cell, i) != i:
                        slot[3] = 1.0
            carried = state.carrying[i]
            flag = 0.0 if carried is None else (
                2.0 if carried in requested else 1.0)
            rows.append(np.concatenate([window.ravel(), [flag, r0, c0]]))
        return np.stack(rows)

    def render(self):
        state = self.state
        grid = [["." for _ in range(self.layout.width)]
                for _ in range(self.layout.height)]
        for r, c in self.layout.workstation_cells:
            grid[r][c] = "g"
        requested = set(state.request_queue)
        for (r, c), shelf in state.shelf_grid.items():
            grid[r][c] = "R" if shelf in requested else "x"
        for i, (r, c) in enumerate(state.robot_pos):
            grid[r][c] = str(i % 10)
        header = "step {}/{} requests {} deliveries {}".format(
            state.step_count, self.horizon, state.request_queue,
            state.deliveries)
        return "\n".join([header] + ["".join(row) for row in grid])

    def prompt_context(self):
        context = super(Warehouse, self).prompt_context()
        context.update(layout=self.layout.name,
                       height=self.layout.height,
                       width=self.layout.width,
                       workstations=", ".join(
                           "({}, {})".format(r, c)
                           for r, c in self.layout.workstation_cells))
        return context


def delivering_robots(obs, next_obs, workstation_cells):
    """Robots that delivered a requested shelf between ``obs`` and
    ``next_obs``, inferred from carrying flags and positions."""
    stations = {tuple(cell) for cell in workstation_cells}
    robots = []
    for i in range(len(obs)):
        before, after = obs[i], next_obs[i]
        flag_index = 9 * len(CHANNELS)
        cell = (int(after[flag_index + 1]), int(after[flag_index + 2]))
        if before[flag_index] == 2.0 and after[flag_index] >= 1.0 and \
                cell in stations:
            robots.append(i)
    return robots


def requested_pickups(obs, next_obs, joint_action):
    """Robots that lifted a currently requested shelf this step."""
    flag_index = 9 * len(CHANNELS)
    return [i for i in range(len(obs))
            if joint_action[i] == TOGGLE and obs[i][flag_index] == 0.0
            and next_obs[i][flag_index] == 2.0]

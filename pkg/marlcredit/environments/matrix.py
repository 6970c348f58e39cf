"""Repeated climbing matrix game with constant observations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..core import EnvKind, EnvSpec
from ..exceptions import ConfigError
from ._grid import MultiAgentEnv


CLIMBING_PAYOFF = ((11.0, -30.0, 0.0),
                   (-30.0, 7.0, 6.0),
                   (0.0, 0.0, 5.0))
EPISODE_LENGTH = 25


@dataclass
class MatrixGameState:
    payoff: Tuple[Tuple[float, ...], ...]
    step_count: int = 0


def optimal_joint_action(payoff):
    """Joint action with the highest common payoff (first on ties)."""
    array = np.asarray(payoff, dtype=np.float64)
    row, col = np.unravel_index(int(np.argmax(array)), array.shape)
    return int(row), int(col)


class ClimbingMatrixGame(MultiAgentEnv):

    action_names = ("A", "B", "C")

    def __init__(self, payoff=CLIMBING_PAYOFF, episode_length=EPISODE_LENGTH):
        payoff = tuple(tuple(float(v) for v in row) for row in payoff)
        if len(payoff) != 3 or any(len(row) != 3 for row in payoff):
            raise ConfigError("The climbing game needs a 3x3 payoff matrix")
        super(ClimbingMatrixGame, self).__init__(EnvSpec(
            num_agents=2,
            obs_dim_per_agent=1,
            action_count_per_agent=3,
            max_episode_steps=episode_length,
            env_kind=EnvKind.MATRIX,
        ))
        self.payoff = payoff
        self.state = MatrixGameState(payoff)

    @property
    def scenario_name(self):
        return "climbing"

    def reset(self, seed=0):
        self._begin(seed)
        self.state = MatrixGameState(self.payoff)
        return self.observe()

    def observe(self):
        return np.ones((2, 1))

    def _step(self, joint_action):
        a1, a2 = joint_action
        self.state.step_count += 1
        reward = self.state.payoff[a1][a2]
        return reward, self.state.step_count >= self.spec.max_episode_steps

    def render(self):
        lines = ["step {}/{}".format(self.state.step_count,
                                     self.spec.max_episode_steps)]
        header = "     " + " ".join("{:>6}".format(n) for n in self.action_names)
        lines.append(header)
        for name, row in zip(self.action_names, self.state.payoff):
            lines.append("{:>4} ".format(name)
                         + " ".join("{:>6g}".format(v) for v in row))
        return "\n".join(lines)

    def prompt_context(self):
        context = super(ClimbingMatrixGame, self).prompt_context()
        best = optimal_joint_action(self.payoff)
        context.update(
            payoff_table="\n".join(
                "  agent 1 plays {}: ".format(name) + ", ".join(
                    "{} -> {:g}".format(other, v)
                    for other, v in zip(self.action_names, row))
                for name, row in zip(self.action_names, self.payoff)),
            best_payoff="{:g}".format(self.payoff[best[0]][best[1]]),
            episode_length=self.spec.max_episode_steps,
        )
        return context

"""The four benchmark environments and the scenario-string factory.

Scenario strings are ``<kind>[:<scenario>]``::

    matrix
    spaceworld:10x10
    lbf:8x8-2p-2f-c
    rware:tiny 2p
"""

import re

from ..core import EnvKind
from ..exceptions import ConfigError, ScenarioParseError
from . import foraging, matrix, spaceworld, warehouse
from .foraging import Foraging, ForagingConfig
from .matrix import ClimbingMatrixGame
from .spaceworld import Spaceworld
from .warehouse import Warehouse


_KIND_ALIASES = {
    "matrix": EnvKind.MATRIX,
    "climbing": EnvKind.MATRIX,
    "spaceworld": EnvKind.SPACEWORLD,
    "lbf": EnvKind.FORAGING,
    "foraging": EnvKind.FORAGING,
    "rware": EnvKind.WAREHOUSE,
    "warehouse": EnvKind.WAREHOUSE,
}

_SPACEWORLD_GRID = re.compile(r"^(?:spaceworld-)?(\d+)x(\d+)$", re.I)

ACTION_NAMES = {
    EnvKind.MATRIX: ClimbingMatrixGame.action_names,
    EnvKind.SPACEWORLD: spaceworld.ACTION_NAMES,
    EnvKind.FORAGING: foraging.ACTION_NAMES,
    EnvKind.WAREHOUSE: warehouse.ACTION_NAMES,
}


def split_env_string(env_string):
    """``"lbf:8x8-2p-2f-c"`` -> ``(EnvKind.FORAGING, "8x8-2p-2f-c")``.

    The capitalized ``Spaceworld-10x10`` form is accepted as well.
    """
    text = env_string.strip()
    kind, _, scenario = text.partition(":")
    key = kind.strip().lower()
    if key not in _KIND_ALIASES and key.startswith("spaceworld-"):
        return EnvKind.SPACEWORLD, key
    if key not in _KIND_ALIASES:
        raise ScenarioParseError(env_string, kind,
                                 "unknown environment kind")
    return _KIND_ALIASES[key], scenario.strip()


def make_env(env_string, params=None):
    """Build a fresh environment from a scenario string.

    :param dict params: extra keyword settings, e.g. ``payoff`` for the
        matrix game or ``agent_levels`` for foraging.
    """
    params = dict(params or {})
    kind, scenario = split_env_string(env_string)
    try:
        if kind is EnvKind.MATRIX:
            if scenario not in ("", "climbing"):
                raise ScenarioParseError(env_string, scenario,
                                         "only the climbing game exists")
            return ClimbingMatrixGame(**params)
        if kind is EnvKind.SPACEWORLD:
            size = 10
            if scenario:
                match = _SPACEWORLD_GRID.match(scenario)
                if not match or match.group(1) != match.group(2):
                    raise ScenarioParseError(env_string, scenario,
                                             "expected <G>x<G>")
                size = int(match.group(1))
            return Spaceworld(grid_size=size, **params)
        if kind is EnvKind.FORAGING:
            levels = {k: tuple(params.pop(k)) for k in
                      ("agent_levels", "food_levels") if k in params}
            config = foraging.parse_scenario(scenario, **levels)
            if params:
                raise ConfigError("Unknown foraging settings: {}".format(
                    ", ".join(sorted(params))))
            return Foraging(config)
        layout, robots = warehouse.parse_scenario(scenario or "tiny 2p")
        return Warehouse(layout=layout, num_robots=robots, **params)
    except TypeError as exc:
        raise ConfigError("Bad settings for {}: {}".format(env_string, exc))


__all__ = [
    "ACTION_NAMES",
    "ClimbingMatrixGame",
    "Foraging",
    "ForagingConfig",
    "Spaceworld",
    "Warehouse",
    "make_env",
    "split_env_string",
]

import os
import socket

try:
    import mock
except ImportError:
    import unittest.mock as mock
import numpy as np
import pytest

import marlcredit.testing
from marlcredit.core import EnvKind, EpisodeBatch, TimeStep, Trajectory


FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def pytest_addoption(parser):
    parser.addoption("--acceptance",
                     action="store_true",
                     default=False,
                     dest="acceptance",
                     help="Run the desk-scale training acceptance tests "
                          "(slow, minutes of CPU)")


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: long training run, needs --acceptance")
    pytest.Mock = mock.Mock
    pytest.MagicMock = mock.MagicMock


def pytest_collection_modifyitems(config, items):
    if config.getoption("acceptance"):
        return
    skip = pytest.mark.skip(reason="--acceptance not enabled")
    for item in items:
        if "acceptance" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def fixture_path():
    def path(*parts):
        return os.path.join(FIXTURES, *parts)
    return path


@pytest.fixture
def chat_server():
    server = marlcredit.testing.StubChatServer().start()
    yield server
    server.shutdown()


@pytest.fixture
def no_network(monkeypatch):
    """Fail any test that tries to open a socket connection."""
    def refuse(self, address):
        raise AssertionError("Network access attempted: {!r}".format(
            address))
    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket.socket, "connect_ex", refuse)


def make_trajectory(rewards, num_agents=2, seed=0, obs_dim=1,
                    env_kind=EnvKind.MATRIX, actions=None):
    steps = []
    for k, reward in enumerate(rewards):
        obs = np.full((num_agents, obs_dim), float(k))
        action = actions[k] if actions is not None else (0,) * num_agents
        steps.append(TimeStep(obs, action, reward,
                              done=k == len(rewards) - 1))
    final = np.full((num_agents, obs_dim), float(len(rewards)))
    return Trajectory(steps, seed, env_kind, final_obs=final)


@pytest.fixture
def trajectory_factory():
    return make_trajectory


@pytest.fixture
def matrix_batch():
    """Two climbing-game episodes of 2 and 1 steps."""
    first = make_trajectory([-30.0, 11.0], seed=3,
                            actions=[(0, 1), (0, 0)])
    second = make_trajectory([5.0], seed=4, actions=[(2, 2)])
    return EpisodeBatch((first, second), batch_id=1)

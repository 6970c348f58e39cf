import os

import pytest

from marlcredit import config, defaults
from marlcredit.core import CreditSource
from marlcredit.exceptions import ConfigError
from marlcredit.llm_client import SessionMode


KEY = {"LLM_API_KEY": "secret"}


def write_config(tmpdir, text, name="run.toml"):
    path = tmpdir.join(name)
    path.write(text)
    return str(path)


class TestLoadConfig(object):

    def test_defaults(self):
        run = config.load_config(environ={})
        assert run.env == "matrix"
        assert run.seeds == (0,)
        assert run.iterations == defaults.DEFAULT_ITERATIONS
        assert run.critic.kind is CreditSource.SHARED
        assert run.policy.hidden_sizes == defaults.DEFAULT_HIDDEN_SIZES
        assert run.llm.api_key is None
        assert not run.dataset.enabled

    def test_file_values(self, tmpdir):
        path = write_config(tmpdir, """
[run]
env = "spaceworld:5x5"
seeds = [3, 4]
iterations = 7
out = "out/sw"

[policy]
hidden_sizes = [16, 8]
gamma = 0.9

[critic]
kind = "oracle"
collision_penalty = -2.0
""")
        run = config.load_config(path, environ={})
        assert run.env == "spaceworld:5x5"
        assert run.seeds == (3, 4)
        assert run.iterations == 7
        assert run.out_dir == "out/sw"
        assert run.policy.hidden_sizes == (16, 8)
        assert run.policy.gamma == 0.9
        assert run.critic.kind is CreditSource.ORACLE
        assert run.critic.collision_penalty == -2.0

    def test_flags_override_file(self, tmpdir):
        path = write_config(tmpdir, """
[run]
env = "spaceworld:5x5"
iterations = 7

[critic]
kind = "oracle"
""")
        run = config.load_config(path, {
            "env": "lbf:5x5-2p-1f",
            "critic": "shared",
            "iterations": 2,
            "seeds": 3,
            "out": None,
        }, environ={})
        assert run.env == "lbf:5x5-2p-1f"
        assert run.critic.kind is CreditSource.SHARED
        assert run.iterations == 2
        assert run.seeds == (0, 1, 2)
        assert run.out_dir == "out"

    def test_env_params(self, tmpdir):
        path = write_config(tmpdir, """
[run]
env = "rware:tiny-2p"

[env_params]
horizon = 40
""")
        assert config.load_config(path, environ={}).env_params == \
            {"horizon": 40}

    @pytest.mark.parametrize(("text", "message"), [
        ("[bogus]\nx = 1\n", "section"),
        ("[run]\ncolour = 1\n", "[run]"),
        ("[policy]\nlayers = 2\n", "[policy]"),
        ("[critic]\nkind = \"psychic\"\n", "[critic]"),
        ("[run\n", "not valid TOML"),
    ])
    def test_bad_file(self, tmpdir, text, message):
        path = write_config(tmpdir, text)
        with pytest.raises(ConfigError) as excinfo:
            config.load_config(path, environ={})
        assert message in str(excinfo.value)

    def test_missing_file(self, tmpdir):
        with pytest.raises(ConfigError) as excinfo:
            config.load_config(str(tmpdir.join("absent.toml")), environ={})
        assert "Cannot read config" in str(excinfo.value)

    def test_unknown_environment(self):
        with pytest.raises(ConfigError):
            config.load_config(overrides={"env": "chess"}, environ={})

    @pytest.mark.parametrize("seeds", [0, [1, 1]])
    def test_bad_seeds(self, seeds):
        with pytest.raises(ConfigError):
            config.load_config(overrides={"seeds": seeds}, environ={})

    def test_bad_normalization(self):
        with pytest.raises(ConfigError):
            config.load_config(overrides={"normalization": "loud"},
                               environ={})


class TestLLMSettings(object):

    @pytest.mark.parametrize("kind", ["llm_mca", "llm_taca"])
    def test_key_required(self, kind):
        with pytest.raises(ConfigError) as excinfo:
            config.load_config(overrides={"critic": kind}, environ={})
        assert "LLM_API_KEY" in str(excinfo.value)

    def test_key_from_environment(self):
        run = config.load_config(overrides={"critic": "llm_mca"},
                                 environ=KEY)
        assert run.llm.api_key == "secret"
        assert run.llm.mode is SessionMode.LIVE
        assert "secret" not in repr(run)

    def test_key_not_needed_without_llm(self):
        assert config.load_config(overrides={"critic": "oracle"},
                                  environ={}).llm.api_key is None

    def test_endpoint_and_model(self):
        run = config.load_config(overrides={
            "critic": "llm_mca", "endpoint": "http://critic:1/v1",
            "model": "tiny"}, environ=KEY)
        assert (run.llm.endpoint, run.llm.model) == ("http://critic:1/v1",
                                                     "tiny")

    def test_record(self, tmpdir):
        path = str(tmpdir.join("run.jsonl"))
        run = config.load_config(overrides={"critic": "llm_mca",
                                            "record": path}, environ=KEY)
        assert run.llm.mode is SessionMode.RECORD
        assert run.llm.cassette == path

    def test_replay_needs_no_key(self, tmpdir):
        path = tmpdir.join("run.jsonl")
        path.write("")
        run = config.load_config(overrides={"critic": "llm_mca",
                                            "replay": str(path)}, environ={})
        assert run.llm.mode is SessionMode.REPLAY

    def test_replay_missing_cassette(self, tmpdir):
        with pytest.raises(ConfigError) as excinfo:
            config.load_config(overrides={
                "critic": "llm_mca",
                "replay": str(tmpdir.join("absent.jsonl"))}, environ={})
        assert "does not exist" in str(excinfo.value)

    def test_replay_and_record(self, tmpdir):
        with pytest.raises(ConfigError) as excinfo:
            config.load_config(overrides={"critic": "llm_mca",
                                          "replay": "a.jsonl",
                                          "record": "b.jsonl"}, environ=KEY)
        assert "mutually exclusive" in str(excinfo.value)

    def test_replay_mode_uses_file_cassette(self, tmpdir):
        tmpdir.join("run.jsonl").write("")
        path = write_config(tmpdir, """
[critic]
kind = "llm_taca"

[llm]
cassette = "{}"
""".format(str(tmpdir.join("run.jsonl"))))
        run = config.load_config(path, {"replay_mode": True}, environ={})
        assert run.llm.mode is SessionMode.REPLAY

    def test_replay_without_cassette(self):
        with pytest.raises(ConfigError) as excinfo:
            config.load_config(overrides={"critic": "llm_mca",
                                          "replay_mode": True}, environ={})
        assert "needs a cassette path" in str(excinfo.value)

    def test_export_dataset(self):
        run = config.load_config(overrides={"export_dataset": True},
                                 environ={})
        assert run.dataset.enabled


class TestCassettePaths(object):

    def _config(self, cassette, seeds):
        return config.RunConfig(seeds=seeds, llm=config.LLMConfig(
            cassette=cassette))

    @pytest.mark.parametrize(("cassette", "seeds", "expected"), [
        ("c/run.jsonl", (0,), ["c/run.jsonl"]),
        ("c/run.jsonl", (0, 1), ["c/run.seed0.jsonl", "c/run.seed1.jsonl"]),
        ("c/run-{seed}.jsonl", (3,), ["c/run-3.jsonl"]),
        ("c/run-{seed}.jsonl", (3, 4), ["c/run-3.jsonl", "c/run-4.jsonl"]),
    ])
    def test_paths(self, cassette, seeds, expected):
        assert config.cassette_paths(self._config(cassette, seeds)) == \
            expected

    def test_no_cassette(self):
        assert config.cassette_path_for_seed(config.RunConfig(), 0) is None

    def test_replay_checks_every_seed(self, tmpdir):
        tmpdir.join("run.seed0.jsonl").write("")
        with pytest.raises(ConfigError) as excinfo:
            config.load_config(overrides={
                "critic": "llm_mca", "seeds": [0, 1],
                "replay": str(tmpdir.join("run.jsonl"))}, environ={})
        assert "run.seed1.jsonl" in str(excinfo.value)


class TestPolicyConfig(object):

    @pytest.mark.parametrize("values", [
        {"gamma": 1.0},
        {"gamma": -0.1},
        {"learning_rate": -1.0},
        {"minibatch_size": 0},
        {"replay_capacity": 0},
        {"epsilon_start": 0.1, "epsilon_end": 0.2},
        {"epsilon_start": 1.5},
        {"epsilon_anneal_fraction": 0.0},
        {"optimizer": "rmsprop"},
        {"d_task": 0},
        {"dropout_max": 1.0},
    ])
    def test_invalid(self, values):
        with pytest.raises(ConfigError):
            config.PolicyConfig(**values).validate()

    def test_valid_defaults(self):
        config.PolicyConfig().validate()

    @pytest.mark.parametrize(("values", "warmup"), [
        ({"minibatch_size": 32}, 32),
        ({"minibatch_size": 32, "learning_starts": 500}, 500),
        ({"learning_starts": 0}, 0),
    ])
    def test_warmup(self, values, warmup):
        assert config.PolicyConfig(**values).warmup == warmup


def test_load_environment(tmpdir, monkeypatch):
    monkeypatch.setenv("LLM_API_KEY", "x")
    monkeypatch.delenv("LLM_API_KEY")
    tmpdir.join(".env").write("LLM_API_KEY=from-dotenv\n")
    assert config.load_environment(str(tmpdir))
    assert os.environ["LLM_API_KEY"] == "from-dotenv"

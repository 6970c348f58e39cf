"""Run configuration: defaults, TOML run files, ``.env`` and CLI flags.

Precedence is flags over file values over :mod:`marlcredit.defaults`.
"""

import dataclasses
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 fallback (same parser, backported)
    import tomli as tomllib
from dataclasses import dataclass, field
from typing import Optional, Tuple

from dotenv import load_dotenv

from . import defaults
from .core import CreditSource
from .environments import make_env
from .exceptions import ConfigError, MarlCreditError
from .llm_client import SessionMode
from .parsing import NORMALIZATION_MODES


def load_environment(directory=None):
    """Load ``.env`` from ``directory`` (default: working directory)."""
    directory = directory or os.getcwd()
    return load_dotenv(os.path.join(directory, ".env"))


@dataclass(frozen=True)
class PolicyConfig:
    hidden_sizes: Tuple[int, ...] = defaults.DEFAULT_HIDDEN_SIZES
    gamma: float = defaults.DEFAULT_GAMMA
    learning_rate: float = defaults.DEFAULT_LEARNING_RATE
    replay_capacity: int = defaults.DEFAULT_REPLAY_CAPACITY
    minibatch_size: int = defaults.DEFAULT_MINIBATCH_SIZE
    sync_interval: int = defaults.DEFAULT_TARGET_SYNC_INTERVAL
    epsilon_start: float = defaults.DEFAULT_EPSILON_START
    epsilon_end: float = defaults.DEFAULT_EPSILON_END
    epsilon_anneal_fraction: float = defaults.DEFAULT_EPSILON_ANNEAL_FRACTION
    grad_clip: float = defaults.DEFAULT_GRAD_CLIP
    optimizer: str = defaults.DEFAULT_OPTIMIZER
    d_task: int = defaults.DEFAULT_D_TASK
    dropout_max: float = defaults.DEFAULT_DROPOUT_MAX
    learning_starts: Optional[int] = None

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("policy.gamma must be in [0, 1)")
        if self.learning_rate < 0:
            raise ConfigError("policy.learning_rate must not be negative")
        if self.minibatch_size < 1 or self.replay_capacity < 1:
            raise ConfigError("policy.minibatch_size and replay_capacity "
                              "must be positive")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ConfigError("policy epsilons must satisfy "
                              "0 <= epsilon_end <= epsilon_start <= 1")
        if not 0.0 < self.epsilon_anneal_fraction <= 1.0:
            raise ConfigError("policy.epsilon_anneal_fraction must be in "
                              "(0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("policy.optimizer must be adam or sgd")
        if self.d_task < 1:
            raise ConfigError("policy.d_task must be at least 1")
        if not 0.0 <= self.dropout_max < 1.0:
            raise ConfigError("policy.dropout_max must be in [0, 1)")

    @property
    def warmup(self):
        if self.learning_starts is None:
            return self.minibatch_size
        return self.learning_starts


@dataclass(frozen=True)
class CriticConfig:
    kind: CreditSource = CreditSource.SHARED
    retries: int = defaults.DEFAULT_CRITIC_RETRIES
    normalization: str = defaults.DEFAULT_NORMALIZATION
    collision_penalty: float = defaults.DEFAULT_COLLISION_PENALTY
    pickup_bonus: float = defaults.DEFAULT_PICKUP_BONUS
    matrix_optimal_bonus: float = defaults.DEFAULT_MATRIX_OPTIMAL_BONUS

    @property
    def uses_llm(self):
        return self.kind in (CreditSource.LLM_MCA, CreditSource.LLM_TACA)


@dataclass(frozen=True)
class LLMConfig:
    endpoint: str = defaults.DEFAULT_ENDPOINT
    model: str = defaults.DEFAULT_MODEL
    token_budget: int = defaults.DEFAULT_TOKEN_BUDGET
    timeout: float = defaults.DEFAULT_TIMEOUT
    max_attempts: int = defaults.DEFAULT_RETRIES
    mode: SessionMode = SessionMode.LIVE
    cassette: Optional[str] = None
    api_key: Optional[str] = field(default=None, repr=False)


@dataclass(frozen=True)
class DatasetConfig:
    enabled: bool = False
    root: Optional[str] = None
    strict: bool = False


@dataclass(frozen=True)
class RunConfig:
    env: str = "matrix"
    env_params: dict = field(default_factory=dict)
    episodes_per_iteration: int = defaults.DEFAULT_EPISODES_PER_ITERATION
    iterations: int = defaults.DEFAULT_ITERATIONS
    update_epochs: int = defaults.DEFAULT_UPDATE_EPOCHS
    seeds: Tuple[int, ...] = (0,)
    eval_episodes: int = defaults.DEFAULT_EVAL_EPISODES
    eval_interval: int = defaults.DEFAULT_EVAL_INTERVAL
    out_dir: str = "out"
    parallel: bool = False
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    llm: LLMConfig = field(default_factory=LLMConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def validate(self):
        make_env(self.env, self.env_params)
        if self.episodes_per_iteration < 1:
            raise ConfigError("run.episodes_per_iteration must be at least 1")
        if self.iterations < 1:
            raise ConfigError("run.iterations must be at least 1")
        if self.update_epochs < 1:
            raise ConfigError("run.update_epochs must be at least 1")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("run.seeds must be non-empty and distinct")
        if self.eval_episodes < 1 or self.eval_interval < 1:
            raise ConfigError("run.eval_episodes and run.eval_interval "
                              "must be positive")
        if self.critic.normalization not in NORMALIZATION_MODES:
            raise ConfigError("critic.normalization must be one of {}"
                              .format(", ".join(NORMALIZATION_MODES)))
        self.policy.validate()
        if self.critic.uses_llm:
            if self.llm.mode is not SessionMode.LIVE and not self.llm.cassette:
                raise ConfigError("{} mode needs a cassette path".format(
                    self.llm.mode.value))
            if self.llm.mode is SessionMode.REPLAY:
                for path in cassette_paths(self):
                    if not os.path.exists(path):
                        raise ConfigError("Cassette {} does not exist"
                                          .format(path))
            elif not self.llm.api_key:
                raise ConfigError(
                    "Environment variable {} is not set; it is needed for "
                    "the {} critic".format(defaults.API_KEY_ENV,
                                           self.critic.kind.value))
        return self


def cassette_path_for_seed(config, seed):
    """Cassette file for one seed.

    A ``{seed}`` placeholder is filled in; otherwise runs with more than
    one seed get ``.seed<N>`` inserted before the file suffix.
    """
    path = config.llm.cassette
    if path is None:
        return None
    if "{seed}" in path:
        return path.format(seed=seed)
    if len(config.seeds) == 1:
        return path
    root, suffix = os.path.splitext(path)
    return "{}.seed{}{}".format(root, seed, suffix)


def cassette_paths(config):
    return [cassette_path_for_seed(config, seed) for seed in config.seeds]


_SECTIONS = {
    "policy": PolicyConfig,
    "critic": CriticConfig,
    "llm": LLMConfig,
    "dataset": DatasetConfig,
}


def _build(cls, values, section):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError("Unknown setting(s) in [{}]: {}".format(
            section, ", ".join(sorted(unknown))))
    values = dict(values)
    try:
        if cls is PolicyConfig and "hidden_sizes" in values:
            values["hidden_sizes"] = tuple(values["hidden_sizes"])
        if cls is CriticConfig and "kind" in values:
            values["kind"] = CreditSource(values["kind"])
        if cls is LLMConfig and "mode" in values:
            values["mode"] = SessionMode(values["mode"])
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError("Bad value in [{}]: {}".format(section, exc))


def _seeds(value):
    if isinstance(value, int):
        if value < 1:
            raise ConfigError("--seeds must be at least 1")
        return tuple(range(value))
    return tuple(int(s) for s in value)


def read_config_file(path):
    try:
        with open(path, "rb") as config_file:
            return tomllib.load(config_file)
    except OSError as exc:
        raise ConfigError("Cannot read config {}: {}".format(path, exc))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("Config {} is not valid TOML: {}".format(path, exc))


_RUN_OVERRIDES = {
    "env": "env",
    "seeds": "seeds",
    "iterations": "iterations",
    "episodes_per_iteration": "episodes_per_iteration",
    "out": "out_dir",
    "parallel": "parallel",
}


def load_config(path=None, overrides=None, environ=None):
    """Assemble and validate a :class:`RunConfig`.

    :param dict overrides: CLI flag values keyed by flag name without
        dashes (``env``, ``critic``, ``seeds``, ``replay`` ...); ``None``
        values are ignored.
    :param environ: mapping to read ``LLM_API_KEY`` from (default
        ``os.environ``).
    """
    environ = os.environ if environ is None else environ
    raw = read_config_file(path) if path else {}
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(raw) - set(_SECTIONS) - {"run", "env_params"}
    if unknown:
        raise ConfigError("Unknown config section(s): {}".format(
            ", ".join(sorted(unknown))))
    run = dict(raw.get("run", {}))
    if "out" in run:
        run["out_dir"] = run.pop("out")
    for flag, name in _RUN_OVERRIDES.items():
        if flag in overrides:
            run[name] = overrides[flag]
    if "seeds" in run:
        run["seeds"] = _seeds(run["seeds"])
    sections = {name: dict(raw.get(name, {})) for name in _SECTIONS}
    if "critic" in overrides:
        sections["critic"]["kind"] = overrides["critic"]
    if "normalization" in overrides:
        sections["critic"]["normalization"] = overrides["normalization"]
    for flag in ("endpoint", "model"):
        if flag in overrides:
            sections["llm"][flag] = overrides[flag]
    if overrides.get("replay") and overrides.get("record"):
        raise ConfigError("--replay and --record are mutually exclusive")
    for mode in ("replay", "record"):
        if overrides.get(mode):
            sections["llm"]["mode"] = mode
            sections["llm"]["cassette"] = overrides[mode]
    if overrides.get("replay_mode"):
        sections["llm"]["mode"] = "replay"
    if overrides.get("export_dataset"):
        sections["dataset"]["enabled"] = True
    sections["llm"].setdefault("api_key", environ.get(defaults.API_KEY_ENV))
    built = {name: _build(cls, sections[name], name)
             for name, cls in _SECTIONS.items()}
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(run) - fields
    if unknown:
        raise ConfigError("Unknown setting(s) in [run]: {}".format(
            ", ".join(sorted(unknown))))
    try:
        config = RunConfig(env_params=dict(raw.get("env_params", {})),
                           **run, **built)
    except TypeError as exc:
        raise ConfigError("Bad [run] settings: {}".format(exc))
    try:
        return config.validate()
    except ConfigError:
        raise
    except MarlCreditError as exc:
        raise ConfigError(str(exc))

"""Base prompts and batch serialization for the language-model critic."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from importlib import resources

from . import defaults
from .core import EnvKind
from .environments import ACTION_NAMES
from .exceptions import ConfigError
from .parsing import CREDIT_GRAMMAR, CREDIT_MARKER, TASK_GRAMMAR


log = logging.getLogger(__name__)

TEMPLATE_VERSION = "v1"

_ENV_TEMPLATE_NAMES = {
    EnvKind.MATRIX: "matrix",
    EnvKind.SPACEWORLD: "spaceworld",
    EnvKind.FORAGING: "foraging",
    EnvKind.WAREHOUSE: "warehouse",
}


class PromptMode(str, enum.Enum):
    MCA = "mca"
    TACA = "taca"


def load_template(name, version=TEMPLATE_VERSION):
    path = resources.files("marlcredit").joinpath(
        "prompts", version, name + ".txt")
    try:
        return path.read_text(encoding="utf-8").rstrip("\n")
    except FileNotFoundError:
        raise ConfigError("Missing prompt template {}/{}".format(
            version, name))


@dataclass(frozen=True)
class PromptBundle:
    """The four parts of the critic's base prompt."""

    p_env: str
    p_desc: str
    p_defn: str
    p_task: str
    mode: PromptMode = PromptMode.MCA

    def __post_init__(self):
        object.__setattr__(self, "mode", PromptMode(self.mode))
        for name in ("p_env", "p_desc", "p_defn", "p_task"):
            if not getattr(self, name).strip():
                raise ConfigError("Prompt part {} is empty".format(name))

    @property
    def system_prompt(self):
        return "\n\n".join((self.p_env, self.p_desc, self.p_defn,
                            self.p_task))


def _render(name, context):
    template = load_template(name)
    try:
        return template.format(**context)
    except KeyError as exc:
        raise ConfigError("Prompt template {} needs setting {}".format(
            name, exc))


def build_base_prompt(env_kind, env_config, mode=PromptMode.MCA,
                      d_task=defaults.DEFAULT_D_TASK):
    """Fill the versioned templates for one environment.

    :param dict env_config: values from the environment's
        ``prompt_context()`` (grid size, agent count, levels and so on).
    """
    try:
        env_kind = EnvKind(env_kind)
        key = _ENV_TEMPLATE_NAMES[env_kind]
    except (KeyError, ValueError):
        raise ConfigError("No prompt templates for environment {!r}".format(
            env_kind))
    mode = PromptMode(mode)
    context = dict(env_config)
    context.update(credit_grammar=CREDIT_GRAMMAR, task_grammar=TASK_GRAMMAR,
                   d_task=d_task)
    context["agreement_example"] = _render("agreement_" + key, context)
    return PromptBundle(
        p_env=_render("env_" + key, context),
        p_desc=_render("desc_" + mode.value, context),
        p_defn=_render("defn", context),
        p_task=_render("task_" + mode.value, context),
        mode=mode,
    )


def format_value(value):
    """Integers without decimals, everything else with three."""
    value = float(value)
    if value.is_integer():
        return "{:d}".format(int(value))
    return "{:.3f}".format(value)


def _vector(values):
    return "[" + ", ".join(format_value(v) for v in values) + "]"


def serialize_batch(batch, action_names=None):
    """Render every episode of ``batch`` as critic input text.

    Steps are numbered 1..K across the whole batch so the credit block
    can address them with one row per agent.
    """
    names = action_names or ACTION_NAMES.get(batch.env_kind, ())
    sections = []
    step_number = 0
    for e, traj in enumerate(batch.trajectories, 1):
        lines = ["episode {} (seed {}, {} steps)".format(
            e, traj.seed, len(traj))]
        for step in traj.steps:
            step_number += 1
            obs = "; ".join(_vector(row) for row in step.joint_obs)
            act = ", ".join(names[a] if a < len(names) else str(a)
                            for a in step.joint_action)
            lines.append("t={} | obs={} | act={} | R={}".format(
                step_number, obs, act, format_value(step.global_reward)))
        sections.append("\n".join(lines))
    text = "\n\n".join(sections) + "\n"
    log.debug("Serialized batch %d: %d episodes, %d characters",
              batch.batch_id, len(batch), len(text))
    return text


def batch_message(batch, action_names=None):
    """The user turn that carries one batch to the critic."""
    return load_template("batch").format(
        num_episodes=len(batch),
        num_agents=batch.num_agents,
        total_steps=batch.total_steps,
        serialized=serialize_batch(batch, action_names),
        marker=CREDIT_MARKER,
    )


def format_reminder(problem, num_agents, total_steps):
    """Corrective turn sent after an unreadable response."""
    return load_template("reminder").format(
        problem=problem,
        marker=CREDIT_MARKER,
        num_agents=num_agents,
        total_steps=total_steps,
        credit_grammar=CREDIT_GRAMMAR,
    )

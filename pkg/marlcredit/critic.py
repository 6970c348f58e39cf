"""Centralized critics: they turn a batch of trajectories into per-agent,
per-step credits (and, for task-and-credit assignment, task vectors).

Four critics share one verdict type:

* shared reward: every agent receives the team reward;
* oracle: deterministic environment-aware rules, usable offline;
* language-model credit assignment over a :class:`ChatSession`;
* the same with task assignments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import defaults
from .core import (
    CreditMatrix,
    CreditSource,
    EnvKind,
    TaskAssignmentMatrix,
    shared_credit_matrix,
    validate_credit_matrix,
)
from .environments import foraging, spaceworld, warehouse
from .environments.matrix import CLIMBING_PAYOFF, optimal_joint_action
from .exceptions import ConfigError, CriticError, ParseError, TransportError
from .llm_client import chat_send
from .parsing import normalize_credits, parse_response
from .prompting import PromptMode, batch_message, format_reminder


log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CriticVerdict:
    """Credits (and tasks) for every trajectory of one batch.

    :ivar transcript: ``(role, text)`` turns exchanged for this batch.
    """

    credits: Tuple[CreditMatrix, ...]
    tasks: Optional[Tuple[TaskAssignmentMatrix, ...]] = None
    explanation: str = ""
    raw_response: str = ""
    degraded: bool = False
    retry_count: int = 0
    warnings: tuple = ()
    transcript: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "credits", tuple(self.credits))
        if self.tasks is not None:
            object.__setattr__(self, "tasks", tuple(self.tasks))


def _release(verdict, batch):
    violations = validate_credit_matrix(verdict.credits, batch)
    if violations:
        raise CriticError("Critic produced invalid credits: {}".format(
            "; ".join(violations)), verdict.transcript)
    return verdict


def shared_reward_assign(batch):
    """Every agent is credited with the team reward of each step."""
    credits = tuple(shared_credit_matrix(traj) for traj in batch)
    return _release(CriticVerdict(credits), batch)


@dataclass(frozen=True)
class OracleSettings:
    collision_penalty: float = defaults.DEFAULT_COLLISION_PENALTY
    pickup_bonus: float = defaults.DEFAULT_PICKUP_BONUS
    matrix_optimal_bonus: float = defaults.DEFAULT_MATRIX_OPTIMAL_BONUS
    payoff: tuple = CLIMBING_PAYOFF
    grid_size: int = 10
    workstation_cells: tuple = ()

    @classmethod
    def for_env(cls, env, **overrides):
        """Settings with the environment facts the rules depend on."""
        facts = {}
        if env is not None:
            if env.spec.env_kind is EnvKind.MATRIX:
                facts["payoff"] = env.payoff
            elif env.spec.env_kind is EnvKind.SPACEWORLD:
                facts["grid_size"] = env.grid_size
            elif env.spec.env_kind is EnvKind.WAREHOUSE:
                facts["workstation_cells"] = env.layout.workstation_cells
        facts.update(overrides)
        return cls(**facts)


def _matrix_credits(traj, settings):
    best = optimal_joint_action(settings.payoff)
    n = traj.num_agents
    values = np.zeros((n, len(traj)))
    for k, step in enumerate(traj.steps):
        values[:, k] = step.global_reward / n
        if step.joint_action == best:
            values[:, k] += settings.matrix_optimal_bonus
    return values


def _spaceworld_state(row, grid_size):
    seen = spaceworld.decode_observation(row)
    carrying = [None, None]
    if seen["own_carry_own"]:
        carrying[0] = 0
    elif seen["own_carry_other"]:
        carrying[0] = 1
    if seen["other_carry_own"]:
        carrying[1] = 0
    elif seen["other_carry_other"]:
        carrying[1] = 1
    return spaceworld.SpaceworldState(
        grid_size=grid_size,
        agent_pos=[seen["pos"], seen["other_pos"]],
        mirror_pos=[seen["own_mirror"], seen["other_mirror"]],
        target_pos=(seen["own_target"], seen["other_target"]),
        carrying=carrying,
    )


def spaceworld_potential(state, agent):
    return spaceworld.agent_task_distance(state, agent)


def _spaceworld_credits(traj, settings):
    n = traj.num_agents
    values = np.zeros((n, len(traj)))
    for k, step in enumerate(traj.steps):
        before = _spaceworld_state(step.joint_obs[0], settings.grid_size)
        after = _spaceworld_state(traj.next_obs(k)[0], settings.grid_size)
        colliders = spaceworld.collision_agents(
            settings.grid_size, before.agent_pos, step.joint_action)
        for i in range(n):
            shaping = spaceworld_potential(before, i) - \
                spaceworld_potential(after, i)
            values[i, k] = shaping + step.global_reward / n
            if i in colliders:
                values[i, k] += settings.collision_penalty
    return values


def _foraging_credits(traj, settings):
    n = traj.num_agents
    values = np.zeros((n, len(traj)))
    num_food = (traj.steps[0].joint_obs.shape[1] - 3 * n) // 3 \
        if traj.steps else 0
    for k, step in enumerate(traj.steps):
        if step.global_reward == 0.0:
            continue
        next_obs = traj.next_obs(k)
        loaders = {}
        levels = {}
        for i in range(n):
            for slot, level in foraging.harvested_foods(
                    step.joint_obs, next_obs, i, step.joint_action,
                    num_food):
                loaders.setdefault(slot, []).append(i)
                levels[slot] = level
        if not loaders:
            values[:, k] = step.global_reward / n
            continue
        food_total = sum(levels.values())
        for slot, agents in loaders.items():
            share = step.global_reward * levels[slot] / food_total
            agent_levels = [step.joint_obs[i][2] for i in agents]
            for i, level in zip(agents, agent_levels):
                values[i, k] += share * level / sum(agent_levels)
    return values


def _warehouse_credits(traj, settings):
    n = traj.num_agents
    values = np.zeros((n, len(traj)))
    for k, step in enumerate(traj.steps):
        next_obs = traj.next_obs(k)
        for i in warehouse.requested_pickups(step.joint_obs, next_obs,
                                             step.joint_action):
            values[i, k] += settings.pickup_bonus
        if step.global_reward == 0.0:
            continue
        robots = warehouse.delivering_robots(
            step.joint_obs, next_obs, settings.workstation_cells)
        if robots:
            for i in robots:
                values[i, k] += step.global_reward / len(robots)
        else:
            values[:, k] += step.global_reward / n
    return values


_ORACLE_RULES = {
    EnvKind.MATRIX: _matrix_credits,
    EnvKind.SPACEWORLD: _spaceworld_credits,
    EnvKind.FORAGING: _foraging_credits,
    EnvKind.WAREHOUSE: _warehouse_credits,
}


def oracle_assign(batch, env_kind, settings=None):
    """Scripted, deterministic credits for a supported environment.

    * matrix: ``r/N`` each, plus a bonus on the optimal joint action;
    * spaceworld: decrease of each agent's own task-distance potential,
      the terminal reward split equally, a penalty for a colliding move;
    * foraging: each harvest split between its loaders by level;
    * warehouse: delivery reward to the delivering robot, a small bonus
      for lifting a requested shelf.
    """
    try:
        rule = _ORACLE_RULES[EnvKind(env_kind)]
    except (KeyError, ValueError):
        raise ConfigError("No oracle critic for environment {!r}".format(
            env_kind))
    settings = settings or OracleSettings()
    credits = tuple(CreditMatrix(rule(traj, settings), CreditSource.ORACLE)
                    for traj in batch)
    return _release(CriticVerdict(credits), batch)


def _split_columns(matrix, lengths):
    parts = []
    start = 0
    for length in lengths:
        parts.append(CreditMatrix(matrix.values[:, start:start + length],
                                  matrix.source))
        start += length
    return parts


def _llm_assign(batch, session, bundle, retries, normalization,
                action_names, d_task):
    mode = PromptMode(bundle.mode)
    source = CreditSource.LLM_TACA if mode is PromptMode.TACA \
        else CreditSource.LLM_MCA
    num_agents, total = batch.num_agents, batch.total_steps
    lengths = [len(traj) for traj in batch]
    rewards = np.concatenate([traj.rewards for traj in batch]) \
        if len(batch) else np.zeros(0)
    message = batch_message(batch, action_names)
    transcript = []
    retry_count = 0
    while True:
        try:
            reply = chat_send(session, message)
        except TransportError as exc:
            raise CriticError("Critic endpoint failed: {}".format(exc),
                              transcript + [("user", message)])
        transcript += [("user", message), ("assistant", reply)]
        try:
            parsed = parse_response(
                reply, num_agents, total,
                d_task if mode is PromptMode.TACA else None, source)
        except ParseError as exc:
            if retry_count >= retries:
                log.warning("Critic response unreadable after %d retries "
                            "(%s); falling back to shared reward",
                            retry_count, exc)
                fallback = shared_reward_assign(batch)
                return CriticVerdict(
                    fallback.credits, None, "", reply, degraded=True,
                    retry_count=retry_count, transcript=tuple(transcript))
            retry_count += 1
            log.warning("Critic response unreadable (%s); retry %d/%d",
                        exc, retry_count, retries)
            message = format_reminder(str(exc), num_agents, total)
            continue
        break
    credits = normalize_credits(parsed.credits, normalization, rewards)
    tasks = None
    if mode is PromptMode.TACA:
        tasks = tuple(parsed.tasks.split(lengths))
    verdict = CriticVerdict(
        tuple(_split_columns(credits, lengths)), tasks, parsed.explanation,
        reply, retry_count=retry_count, warnings=parsed.warnings,
        transcript=tuple(transcript))
    return _release(verdict, batch)


def llm_mca_assign(batch, llm_session, prompt_bundle,
                   retries=defaults.DEFAULT_CRITIC_RETRIES,
                   normalization=defaults.DEFAULT_NORMALIZATION,
                   action_names=None):
    """Credits from the language-model critic.

    Unreadable responses are retried with a format reminder; after
    ``retries`` failed retries the verdict falls back to shared reward and
    is flagged ``degraded``.

    :raises CriticError: if the endpoint cannot be reached.
    """
    return _llm_assign(batch, llm_session, prompt_bundle, retries,
                       normalization, action_names, None)


def llm_taca_assign(batch, llm_session, prompt_bundle,
                    retries=defaults.DEFAULT_CRITIC_RETRIES,
                    normalization=defaults.DEFAULT_NORMALIZATION,
                    action_names=None, d_task=defaults.DEFAULT_D_TASK):
    """As :func:`llm_mca_assign`, plus per-agent task assignments."""
    if PromptMode(prompt_bundle.mode) is not PromptMode.TACA:
        raise ConfigError("Task assignment needs a taca prompt bundle")
    return _llm_assign(batch, llm_session, prompt_bundle, retries,
                       normalization, action_names, d_task)


@dataclass
class Critic(object):
    """A configured critic that counts its invocations."""

    kind: CreditSource
    call_fn: object = field(repr=False)
    calls: int = 0
    degraded_calls: int = 0

    def assign(self, batch):
        self.calls += 1
        verdict = self.call_fn(batch)
        if verdict.degraded:
            self.degraded_calls += 1
        return verdict


def make_critic(kind, env=None, settings=None, session=None, bundle=None,
                retries=defaults.DEFAULT_CRITIC_RETRIES,
                normalization=defaults.DEFAULT_NORMALIZATION,
                d_task=defaults.DEFAULT_D_TASK):
    kind = CreditSource(kind)
    if kind is CreditSource.SHARED:
        return Critic(kind, shared_reward_assign)
    if kind is CreditSource.ORACLE:
        if env is None:
            raise ConfigError("The oracle critic needs the environment")
        settings = settings or OracleSettings.for_env(env)
        return Critic(kind, lambda batch: oracle_assign(
            batch, env.spec.env_kind, settings))
    if session is None or bundle is None:
        raise ConfigError("Critic {} needs a chat session and prompt"
                          .format(kind.value))
    names = env.action_names if env is not None else None
    if kind is CreditSource.LLM_MCA:
        return Critic(kind, lambda batch: llm_mca_assign(
            batch, session, bundle, retries, normalization, names))
    return Critic(kind, lambda batch: llm_taca_assign(
        batch, session, bundle, retries, normalization, names, d_task))

"""Offline dataset of annotated trajectories, one JSON document per line.

Each episode is a header line, one line per step and a footer line. A
reader treats the footer as the end-of-record marker, so an episode cut
short by a crash is detected and skipped. The schema is described in
``docs/dataset.md``.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import defaults
from .core import (
    CreditMatrix,
    CreditSource,
    EnvKind,
    TaskAssignmentMatrix,
    TimeStep,
    Trajectory,
    episode_return,
)
from .exceptions import DatasetError, DatasetWriteError, ShapeError


log = logging.getLogger(__name__)

_UNSAFE = re.compile(r"[^A-Za-z0-9_.\-]+")


@dataclass(frozen=True)
class DatasetRecord:
    """One annotated episode.

    Credits are stored after normalization; ``normalization`` names the
    mode that produced them. ``tasks`` is ``None`` for critics that do
    not assign tasks.
    """

    env_kind: EnvKind
    scenario: str
    seed: int
    critic_kind: CreditSource
    run_id: str
    trajectory: Trajectory
    credits: CreditMatrix
    tasks: Optional[TaskAssignmentMatrix] = None
    normalization: str = defaults.DEFAULT_NORMALIZATION
    explanation: str = ""
    degraded: bool = False
    schema_version: int = defaults.DATASET_SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "env_kind", EnvKind(self.env_kind))
        object.__setattr__(self, "critic_kind",
                           CreditSource(self.critic_kind))
        n, k = self.credits.shape
        if k != len(self.trajectory):
            raise ShapeError("Record has {} credit columns for {} steps"
                             .format(k, len(self.trajectory)))
        if self.trajectory.num_agents and n != self.trajectory.num_agents:
            raise ShapeError("Record has {} credit rows for {} agents"
                             .format(n, self.trajectory.num_agents))
        if self.tasks is not None and (
                self.tasks.length != k or self.tasks.num_agents != n):
            raise ShapeError("Task matrix does not match the credits")

    @property
    def num_agents(self):
        return self.credits.num_agents

    @property
    def episode_return(self):
        return episode_return(self.trajectory)


@dataclass(frozen=True)
class DatasetFilter:
    """Keep records whose set fields all match."""

    env_kind: Optional[EnvKind] = None
    critic_kind: Optional[CreditSource] = None
    run_id: Optional[str] = None

    def matches(self, record):
        if self.env_kind is not None and \
                record.env_kind is not EnvKind(self.env_kind):
            return False
        if self.critic_kind is not None and \
                record.critic_kind is not CreditSource(self.critic_kind):
            return False
        return self.run_id is None or record.run_id == self.run_id


def dataset_path(root, env_kind, scenario, critic_kind, run_id):
    """``<root>/<env>/<scenario>/<critic>/<run-id>.jsonl``."""
    parts = [EnvKind(env_kind).value, scenario, CreditSource(critic_kind).value,
             run_id]
    safe = [_UNSAFE.sub("-", str(part)).strip("-") or "_" for part in parts]
    return os.path.join(root, *safe[:-1], safe[-1] + ".jsonl")


def _dump(document):
    return (json.dumps(document, ensure_ascii=False, allow_nan=False)
            + "\n").encode("utf-8")


def encode_episode(record):
    """The lines of ``record`` as encoded bytes, header first."""
    traj = record.trajectory
    lines = [_dump({
        "type": "header",
        "schema_version": record.schema_version,
        "env_kind": record.env_kind.value,
        "scenario": record.scenario,
        "num_agents": record.num_agents,
        "seed": record.seed,
        "critic_kind": record.critic_kind.value,
        "credit_source": record.credits.source.value,
        "normalization": record.normalization,
        "run_id": record.run_id,
        "length": len(traj),
        "d_task": record.tasks.d_task if record.tasks is not None else None,
    })]
    for k, step in enumerate(traj.steps):
        tasks = None
        if record.tasks is not None:
            tasks = [list(record.tasks.get(i, k))
                     if record.tasks.get(i, k) is not None else None
                     for i in range(record.num_agents)]
        lines.append(_dump({
            "type": "step",
            "t": k + 1,
            "joint_obs": step.joint_obs.tolist(),
            "joint_action": list(step.joint_action),
            "global_reward": step.global_reward,
            "credit": record.credits.values[:, k].tolist(),
            "task": tasks,
            "done": step.done,
        }))
    lines.append(_dump({
        "type": "footer",
        "steps": len(traj),
        "episode_return": record.episode_return if len(traj) else 0.0,
        "explanation": record.explanation,
        "degraded": record.degraded,
        "final_obs": traj.final_obs.tolist()
        if traj.final_obs is not None else None,
    }))
    return lines


def write_episode(record, sink):
    """Append ``record`` to a path or binary stream and flush.

    :returns: number of bytes written.
    :raises DatasetWriteError: on an I/O failure; ``bytes_written`` tells
        how much of the episode reached the sink.
    """
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        try:
            directory = os.path.dirname(os.path.abspath(sink))
            os.makedirs(directory, exist_ok=True)
            with open(sink, "ab") as stream:
                return write_episode(record, stream)
        except DatasetWriteError:
            raise
        except OSError as exc:
            raise DatasetWriteError("Cannot open dataset file {}: {}".format(
                sink, exc))
    written = 0
    try:
        for line in encode_episode(record):
            sink.write(line)
            written += len(line)
        sink.flush()
    except (OSError, ValueError) as exc:
        raise DatasetWriteError(
            "Dataset write failed after {} bytes: {}".format(written, exc),
            written)
    return written


class DatasetWriter(object):
    """Appends episodes of one run to its dataset file."""

    def __init__(self, path):
        self.path = path
        self.episodes = 0
        self.bytes_written = 0

    def write(self, record):
        self.bytes_written += write_episode(record, self.path)
        self.episodes += 1
        return self


def _decode(header, steps, footer):
    if header.get("schema_version") != defaults.DATASET_SCHEMA_VERSION:
        raise DatasetError("Unsupported dataset schema version {!r}".format(
            header.get("schema_version")))
    if len(steps) != header["length"] or footer["steps"] != len(steps):
        raise DatasetError("Episode declares {} steps but has {}".format(
            header["length"], len(steps)))
    n = header["num_agents"]
    trajectory = Trajectory(
        tuple(TimeStep(s["joint_obs"], s["joint_action"], s["global_reward"],
                       s["done"]) for s in steps),
        header["seed"], header["env_kind"],
        final_obs=footer["final_obs"])
    credits = CreditMatrix(
        np.array([s["credit"] for s in steps], dtype=np.float64)
        .reshape(len(steps), n).T,
        header["credit_source"])
    tasks = None
    if header["d_task"] is not None:
        rows = [[None] * len(steps) for _ in range(n)]
        for k, step in enumerate(steps):
            for i, entry in enumerate(step["task"]):
                rows[i][k] = None if entry is None else tuple(entry)
        tasks = TaskAssignmentMatrix(tuple(tuple(r) for r in rows),
                                     header["d_task"])
    return DatasetRecord(
        env_kind=header["env_kind"],
        scenario=header["scenario"],
        seed=header["seed"],
        critic_kind=header["critic_kind"],
        run_id=header["run_id"],
        trajectory=trajectory,
        credits=credits,
        tasks=tasks,
        normalization=header["normalization"],
        explanation=footer["explanation"],
        degraded=footer["degraded"],
        schema_version=header["schema_version"],
    )


def read_dataset(path, record_filter=None, strict=False):
    """Lazily yield the :class:`DatasetRecord` values stored in ``path``.

    Corrupt lines, truncated episodes and unsupported schema versions are
    logged and skipped, or raise :class:`DatasetError` when ``strict``.
    """
    record_filter = record_filter or DatasetFilter()

    def problem(message):
        if strict:
            raise DatasetError(message)
        log.warning("%s; skipping episode", message)

    header, steps, skipping = None, [], False
    with open(path, encoding="utf-8") as stream:
        for number, line in enumerate(stream, 1):
            if not line.strip():
                continue
            try:
                document = json.loads(line)
                kind = document["type"]
            except (ValueError, KeyError, TypeError):
                problem("Corrupt line {}:{}".format(path, number))
                header, steps, skipping = None, [], True
                continue
            if kind == "header":
                if header is not None:
                    problem("Truncated episode before {}:{}".format(
                        path, number))
                header, steps, skipping = document, [], False
            elif skipping:
                continue
            elif header is None:
                problem("{} line outside an episode at {}:{}".format(
                    kind, path, number))
                skipping = True
            elif kind == "step":
                steps.append(document)
            elif kind == "footer":
                try:
                    record = _decode(header, steps, document)
                except (DatasetError, KeyError, TypeError, ValueError) as exc:
                    problem("Bad episode ending at {}:{} ({})".format(
                        path, number, exc))
                    record = None
                header, steps = None, []
                if record is not None and record_filter.matches(record):
                    yield record
            else:
                problem("Unknown line type {!r} at {}:{}".format(
                    kind, path, number))
                header, steps, skipping = None, [], True
    if header is not None:
        problem("Truncated episode at the end of {}".format(path))

"""Turn critic responses into credit and task matrices.

The response grammar is deliberately strict. A credit block looks like::

    CREDITS:
    agent 1: [0, 0, 1]
    agent 2: [0, 1, 0]

and an optional task block like::

    TASKS:
    agent 1 step 4: [2, 7, 0, 0]
    agent 2 step 1: none

Anything outside the blocks is free text and is kept verbatim as the
critic's explanation. The grammar strings below are pasted into the task
prompt unchanged.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import CreditMatrix, CreditSource, TaskAssignmentMatrix
from .exceptions import DomainError, ParseError


log = logging.getLogger(__name__)

CREDIT_MARKER = "CREDITS:"
TASK_MARKER = "TASKS:"

CREDIT_GRAMMAR = (
    "CREDITS:\n"
    "agent <i>: [<c_1>, <c_2>, ..., <c_K>]\n"
    "Write exactly one row per agent i = 1..N and exactly K numbers per "
    "row, one number per time step t = 1..K in the order the steps were "
    "listed. Numbers are plain decimals such as 0, -1.5 or 0.25."
)

TASK_GRAMMAR = (
    "TASKS:\n"
    "agent <i> step <t>: [<n_1>, ..., <n_d>] | none\n"
    "Each task is an array of exactly d integers. Write a row only when "
    "you give agent i a new task at step t; write none (or leave the row "
    "out) to give no task."
)

NORMALIZATION_MODES = ("none", "symmetric", "sum_preserving")

_MARKERS = re.compile(r"CREDITS:|TASKS:")
_CREDIT_ROW = re.compile(r"agent\s+(\d{1,9})\s*:\s*\[([^\[\]]*)\]",
                         re.IGNORECASE)
_TASK_ROW = re.compile(
    r"agent\s+(\d{1,9})\s+step\s+(\d{1,9})\s*:\s*(\[[^\[\]\n]*\]|none)",
    re.IGNORECASE)
_NUMBER = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d{1,4})?$")
_INTEGER = re.compile(r"^[+-]?\d{1,18}$")


@dataclass(frozen=True)
class ParseWarning:
    """A recoverable problem found while parsing a response."""

    kind: str
    detail: str
    span: Tuple[int, int] = (0, 0)


def _blocks(text, marker):
    """``(start, body_start, end)`` for every block opened by ``marker``."""
    found = list(_MARKERS.finditer(text))
    blocks = []
    for index, match in enumerate(found):
        if match.group(0) != marker:
            continue
        end = found[index + 1].start() if index + 1 < len(found) \
            else len(text)
        blocks.append((match.start(), match.end(), end))
    return blocks


def _parse_number(token):
    token = token.strip()
    if not _NUMBER.match(token):
        return None
    value = float(token)
    if not math.isfinite(value):
        return None
    return value


def _parse_credit_block(text, start, body, end, num_agents, length):
    rows = {}
    for match in _CREDIT_ROW.finditer(text, body, end):
        agent = int(match.group(1))
        span = (match.start(), match.end())
        if agent < 1 or agent > num_agents or agent in rows:
            raise ParseError(
                "row_count_mismatch",
                "unexpected row for agent {} (expected agents 1..{} once "
                "each)".format(agent, num_agents), span)
        inner = match.group(2).strip()
        tokens = [t for t in inner.split(",")] if inner else []
        values = []
        for token in tokens:
            value = _parse_number(token)
            if value is None:
                raise ParseError(
                    "non_numeric",
                    "agent {} row has non-numeric entry {!r}".format(
                        agent, token.strip()[:40]), span)
            values.append(value)
        if len(values) != length:
            raise ParseError(
                "length_mismatch",
                "agent {} row has {} numbers, expected {}".format(
                    agent, len(values), length), span)
        rows[agent] = values
    if len(rows) != num_agents:
        raise ParseError(
            "row_count_mismatch",
            "found {} agent rows, expected {}".format(len(rows), num_agents),
            (start, end))
    return [rows[i] for i in range(1, num_agents + 1)]


def extract_credit_matrix(text, num_agents, length,
                          source=CreditSource.LLM_MCA, warnings=None,
                          strict=False):
    """Locate the credit block and read an ``N x K`` matrix from it.

    The first well-formed block wins; later blocks only add a
    ``duplicate_block`` warning (or raise it when ``strict``).

    :param list warnings: if given, :class:`ParseWarning` values are
        appended to it.
    :raises ParseError: when no block satisfies the grammar.
    """
    if num_agents < 1 or length < 1:
        raise DomainError("N and K must be at least 1")
    blocks = _blocks(text, CREDIT_MARKER)
    if not blocks:
        raise ParseError("missing_block",
                         "no {} block in response".format(CREDIT_MARKER),
                         (0, len(text)))
    if len(blocks) > 1:
        span = (blocks[1][0], blocks[-1][2])
        if strict:
            raise ParseError("duplicate_block",
                             "{} credit blocks in response".format(
                                 len(blocks)), span)
        warning = ParseWarning("duplicate_block",
                               "{} credit blocks; using the first "
                               "well-formed one".format(len(blocks)), span)
        log.warning("Critic response: %s", warning.detail)
        if warnings is not None:
            warnings.append(warning)
    first_error = None
    for start, body, end in blocks:
        try:
            rows = _parse_credit_block(text, start, body, end, num_agents,
                                       length)
        except ParseError as exc:
            first_error = first_error or exc
            continue
        return CreditMatrix(np.array(rows, dtype=np.float64), source)
    raise first_error


def _parse_task_vector(raw, d_task):
    inner = raw.strip()[1:-1].strip()
    tokens = [t.strip() for t in inner.split(",")] if inner else []
    if not all(_INTEGER.match(t) for t in tokens):
        return None, "non-integer entry"
    if len(tokens) != d_task:
        return None, "width {} instead of {}".format(len(tokens), d_task)
    return tuple(int(t) for t in tokens), None


def extract_task_assignments(text, num_agents, length, d_task,
                             warnings=None):
    """Read the optional task block into a :class:`TaskAssignmentMatrix`.

    A missing block means no assignments. Malformed entries are dropped
    with a ``rejected_task`` warning; they never fail the response.
    """
    if d_task < 1:
        raise DomainError("d_task must be at least 1")
    warnings = [] if warnings is None else warnings
    first_new = len(warnings)
    entries = [[None] * length for _ in range(num_agents)]
    blocks = _blocks(text, TASK_MARKER)
    if not blocks:
        return TaskAssignmentMatrix(tuple(map(tuple, entries)), d_task)
    if len(blocks) > 1:
        warnings.append(ParseWarning(
            "duplicate_block", "{} task blocks; using the first".format(
                len(blocks)), (blocks[1][0], blocks[-1][2])))
    _, body, end = blocks[0]
    seen = set()
    for match in _TASK_ROW.finditer(text, body, end):
        agent, step = int(match.group(1)), int(match.group(2))
        span = (match.start(), match.end())
        if not (1 <= agent <= num_agents and 1 <= step <= length):
            warnings.append(ParseWarning(
                "rejected_task", "agent {} step {} is out of range".format(
                    agent, step), span))
            continue
        if (agent, step) in seen:
            warnings.append(ParseWarning(
                "rejected_task", "repeated entry for agent {} step {}".format(
                    agent, step), span))
            continue
        seen.add((agent, step))
        raw = match.group(3)
        if raw.lower() == "none":
            continue
        vector, reason = _parse_task_vector(raw, d_task)
        if vector is None:
            warnings.append(ParseWarning(
                "rejected_task", "agent {} step {}: {}".format(
                    agent, step, reason), span))
            continue
        entries[agent - 1][step - 1] = vector
    for warning in warnings[first_new:]:
        log.warning("Critic response: %s", warning.detail)
    return TaskAssignmentMatrix(tuple(map(tuple, entries)), d_task)


def explanation_text(text):
    """Free text preceding the first block marker."""
    match = _MARKERS.search(text)
    return (text[:match.start()] if match else text).strip()


def normalize_credits(matrix, mode="symmetric", rewards=None):
    """Rescale a credit matrix.

    ``symmetric`` divides by ``max(1, max |c|)``; ``sum_preserving``
    scales each column so agents' credits add up to that step's reward
    (columns with a zero sum, or whose rescaled values overflow, are left
    alone).
    """
    if mode not in NORMALIZATION_MODES:
        raise DomainError("Unknown normalization mode {!r}".format(mode))
    values = matrix.values
    if mode == "none":
        return matrix
    if mode == "symmetric":
        scale = max(1.0, float(np.max(np.abs(values)))) if values.size \
            else 1.0
        return CreditMatrix(values / scale, matrix.source)
    if rewards is None:
        raise DomainError("sum_preserving normalization needs the rewards")
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape != (values.shape[1],):
        raise DomainError("Expected {} rewards, got {}".format(
            values.shape[1], rewards.shape))
    totals = values.sum(axis=0)
    factors = np.ones_like(totals)
    nonzero = totals != 0.0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        factors[nonzero] = rewards[nonzero] / totals[nonzero]
        scaled = values * factors[None, :]
    overflow = ~np.all(np.isfinite(scaled), axis=0)
    if overflow.any():
        log.warning("Left %d credit column(s) unscaled: sum too close to 0",
                    int(overflow.sum()))
        scaled[:, overflow] = values[:, overflow]
    return CreditMatrix(scaled, matrix.source)


def format_number(value):
    """Shortest text that reads back to exactly ``value``."""
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return "{:d}".format(int(value))
    return repr(value)


def render_credit_block(matrix):
    lines = [CREDIT_MARKER]
    for i, row in enumerate(matrix.values, 1):
        lines.append("agent {}: [{}]".format(
            i, ", ".join(format_number(v) for v in row)))
    return "\n".join(lines)


def render_task_block(tasks):
    lines = [TASK_MARKER]
    for i, row in enumerate(tasks.entries, 1):
        for k, entry in enumerate(row, 1):
            if entry is not None:
                lines.append("agent {} step {}: [{}]".format(
                    i, k, ", ".join(str(v) for v in entry)))
    return "\n".join(lines)


@dataclass(frozen=True)
class ParsedResponse:
    credits: CreditMatrix
    tasks: Optional[TaskAssignmentMatrix]
    explanation: str
    warnings: Tuple[ParseWarning, ...]


def parse_response(text, num_agents, length, d_task=None,
                   source=CreditSource.LLM_MCA):
    """Credits, optional tasks and explanation from one response."""
    warnings: List[ParseWarning] = []
    credits = extract_credit_matrix(text, num_agents, length, source,
                                    warnings)
    tasks = None
    if d_task:
        tasks = extract_task_assignments(text, num_agents, length, d_task,
                                         warnings)
    return ParsedResponse(credits, tasks, explanation_text(text),
                          tuple(warnings))

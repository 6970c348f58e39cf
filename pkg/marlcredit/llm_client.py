"""Chat-completions transport for the language-model critic.

A :class:`ChatSession` keeps the conversation (base prompt first) and
talks to any OpenAI-compatible ``/chat/completions`` endpoint. Sessions
can record every exchange to a cassette, a JSON-lines file of
``{request_hash, request, response}`` records, and replay it later
without touching the network.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import time

import requests

from . import defaults
from .exceptions import (
    BudgetError,
    CassetteError,
    ConfigError,
    TransportError,
)


log = logging.getLogger(__name__)

RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


class SessionMode(str, enum.Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


def estimate_tokens(text):
    """Rough token count: four characters per token, rounded up."""
    return (len(text) + 3) // 4


def request_hash(model_name, messages):
    """Stable digest of the model name and full message list."""
    payload = json.dumps({"model": model_name, "messages": messages},
                         sort_keys=True, separators=(",", ":"),
                         ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_cassette(path):
    records = []
    try:
        with open(path, encoding="utf-8") as cassette:
            for number, line in enumerate(cassette, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    record["request_hash"], record["response"]
                except (ValueError, KeyError, TypeError):
                    raise CassetteError(
                        "Corrupt cassette record at {}:{}".format(
                            path, number))
                records.append(record)
    except OSError as exc:
        raise CassetteError("Cannot read cassette {}: {}".format(path, exc))
    return records


class ChatSession(object):
    """One critic conversation.

    :ivar history: ``(role, text)`` pairs; ``history[0]`` is the system
        prompt and is never evicted.
    :ivar attempt_count: HTTP attempts used by the last live send.
    """

    def __init__(self, system_prompt, endpoint=defaults.DEFAULT_ENDPOINT,
                 model_name=defaults.DEFAULT_MODEL,
                 token_budget=defaults.DEFAULT_TOKEN_BUDGET,
                 mode=SessionMode.LIVE, cassette_path=None, api_key=None,
                 timeout=defaults.DEFAULT_TIMEOUT,
                 max_attempts=defaults.DEFAULT_RETRIES,
                 backoff_base=defaults.DEFAULT_BACKOFF_BASE,
                 backoff_factor=defaults.DEFAULT_BACKOFF_FACTOR,
                 sleep=time.sleep, http=None):
        self.endpoint = endpoint
        self.model_name = model_name
        self.token_budget = int(token_budget)
        self.mode = SessionMode(mode)
        self.cassette_path = cassette_path
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = int(max_attempts)
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._sleep = sleep
        self.history = [("system", system_prompt)]
        self.attempt_count = 0
        self.sent_count = 0
        self._http = http
        self._replay = []
        self._replay_index = 0
        if self.mode is not SessionMode.LIVE and not cassette_path:
            raise ConfigError("{} mode needs a cassette path".format(
                self.mode.value))
        if self.mode is SessionMode.REPLAY:
            self._replay = load_cassette(cassette_path)
        elif self.mode is SessionMode.RECORD:
            directory = os.path.dirname(os.path.abspath(cassette_path))
            os.makedirs(directory, exist_ok=True)
            open(cassette_path, "w", encoding="utf-8").close()
        if self.mode is not SessionMode.REPLAY and not api_key:
            raise ConfigError("Environment variable {} is not set".format(
                defaults.API_KEY_ENV))

    @property
    def system_prompt(self):
        return self.history[0][1]

    @property
    def messages(self):
        return [{"role": role, "content": text}
                for role, text in self.history]

    def estimated_tokens(self, pending=""):
        return (sum(estimate_tokens(text) for _, text in self.history)
                + estimate_tokens(pending))

    def send(self, message):
        return chat_send(self, message)

    def _post(self, messages):
        if self._http is None:
            self._http = requests.Session()
        url = self.endpoint.rstrip("/") + "/chat/completions"
        headers = {"Authorization": "Bearer {}".format(self.api_key)}
        body = {"model": self.model_name, "messages": messages}
        last_error = None
        for attempt in range(1, self.max_attempts + 1):
            self.attempt_count = attempt
            try:
                response = self._http.post(url, json=body, headers=headers,
                                           timeout=self.timeout)
            except (requests.exceptions.ConnectionError,
                    requests.exceptions.Timeout) as exc:
                last_error = str(exc)
            else:
                if response.status_code < 400:
                    return _reply_text(response, attempt)
                last_error = "HTTP {}".format(response.status_code)
                if response.status_code not in RETRY_STATUSES:
                    raise TransportError(
                        "Chat endpoint refused the request: {}".format(
                            last_error), attempt)
            if attempt < self.max_attempts:
                delay = self.backoff_base * self.backoff_factor ** (
                    attempt - 1)
                log.warning("Chat request attempt %d/%d failed (%s); "
                            "retrying in %.1fs", attempt, self.max_attempts,
                            last_error, delay)
                self._sleep(delay)
        raise TransportError(
            "Chat endpoint failed after {} attempts: {}".format(
                self.max_attempts, last_error), self.max_attempts)

    def _replay_next(self, digest):
        if self._replay_index >= len(self._replay):
            raise CassetteError(
                "Cassette {} has no record left for request {}".format(
                    self.cassette_path, digest))
        record = self._replay[self._replay_index]
        if record["request_hash"] != digest:
            raise CassetteError(
                "Cassette {} record {} expected request {}, got {}".format(
                    self.cassette_path, self._replay_index + 1,
                    record["request_hash"], digest))
        self._replay_index += 1
        return record["response"]

    def _record(self, digest, messages, reply):
        record = {"request_hash": digest,
                  "request": {"model": self.model_name,
                              "messages": messages},
                  "response": reply}
        with open(self.cassette_path, "a", encoding="utf-8") as cassette:
            cassette.write(json.dumps(record, ensure_ascii=False,
                                      sort_keys=True) + "\n")
            cassette.flush()


def _reply_text(response, attempt):
    try:
        return response.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise TransportError("Malformed chat completion response", attempt)


def manage_history(session, pending=""):
    """Evict the oldest non-system turn pairs until the conversation plus
    ``pending`` fits the token budget.

    :raises BudgetError: if the system prompt and ``pending`` alone do
        not fit.
    """
    evicted = 0
    while session.estimated_tokens(pending) > session.token_budget:
        if len(session.history) < 3:
            raise BudgetError(
                "Message of ~{} tokens does not fit the {} token budget "
                "next to the base prompt".format(
                    estimate_tokens(pending), session.token_budget))
        del session.history[1:3]
        evicted += 1
    if evicted:
        log.info("Evicted %d old turn pair(s) to fit %d tokens", evicted,
                 session.token_budget)
    return session


def chat_send(session, message):
    """Send ``message`` with the full history and return the reply.

    The user and assistant turns are appended to the history only once a
    reply arrived.
    """
    manage_history(session, message)
    messages = session.messages + [{"role": "user", "content": message}]
    digest = request_hash(session.model_name, messages)
    if session.mode is SessionMode.REPLAY:
        reply = session._replay_next(digest)
    else:
        reply = session._post(messages)
        if session.mode is SessionMode.RECORD:
            session._record(digest, messages, reply)
    session.history.append(("user", message))
    session.history.append(("assistant", reply))
    session.sent_count += 1
    return reply

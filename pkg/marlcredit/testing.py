"""Utilities for testing."""

import logging
import threading

import flask
from werkzeug.serving import make_server


log = logging.getLogger(__name__)


class StubChatServer(object):
    """Stub chat-completions server for testing.

    Responses are configured in order with :meth:`respond` and
    :meth:`respond_error` *before* the client connects; each incoming
    ``POST /v1/chat/completions`` consumes the next one. Received request
    bodies are kept in :attr:`requests`.

    :param host: interface to bind; the port is picked by the OS and can
        be read from :attr:`url`.
    """

    def __init__(self, host="127.0.0.1"):
        self.requests = []
        self._responses = []
        self._lock = threading.Lock()
        self.app = flask.Flask(__name__)
        self.app.add_url_rule("/v1/chat/completions", "chat",
                              self._handle, methods=["POST"])
        self._server = make_server(host, 0, self.app, threaded=True)
        self._thread = None

    @property
    def url(self):
        host, port = self._server.server_address[:2]
        return "http://{}:{}/v1".format(host, port)

    def respond(self, content):
        """Queue a successful completion carrying ``content``."""
        self._responses.append((200, {
            "object": "chat.completion",
            "choices": [{"index": 0,
                         "message": {"role": "assistant",
                                     "content": content},
                         "finish_reason": "stop"}],
        }))

    def respond_error(self, status=500):
        self._responses.append((status, {"error": {"code": status}}))

    def _handle(self):
        body = flask.request.get_json(force=True)
        with self._lock:
            self.requests.append(body)
            if not self._responses:
                log.error("Unexpected chat request #%d", len(self.requests))
                return flask.jsonify({"error": "unexpected request"}), 599
            status, payload = self._responses.pop(0)
        return flask.jsonify(payload), status

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever)
        self._thread.daemon = True
        self._thread.start()
        return self

    def shutdown(self):
        self._server.shutdown()
        if self._thread is not None:
            self._thread.join()
        self._server.server_close()

"""Deterministic stand-ins for the LLM judge: an overlap-based scorer and a local HTTP server."""
from __future__ import annotations

import json
import re
import threading
import time
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

from .prompt import JudgeRequest, JudgeScores, extract_captions, render_scores

_TOKEN = re.compile(r"[a-z0-9]+")

# Per-dimension cut points on reference-token recall; score = 1 + number passed.
# The first cut is just above zero and the last is 1.0, so disjoint captions
# score 1 and captions covering every reference token score 5.
CUTS = {
    "terminology": (1e-9, 0.30, 0.60, 1.0),
    "instrument_anatomy": (1e-9, 0.35, 0.65, 1.0),
    "specificity": (1e-9, 0.25, 0.55, 1.0),
    "procedure_context": (1e-9, 0.30, 0.70, 1.0),
    "action_state": (1e-9, 0.40, 0.65, 1.0),
}


def tokens(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


def reference_recall(generated: str, reference: str) -> float:
    ref = tokens(reference)
    if not ref:
        return 0.0
    return len(ref & tokens(generated)) / len(ref)


def mock_judge(req: JudgeRequest) -> JudgeScores:
    r = reference_recall(req.generated, req.reference)
    return JudgeScores(**{k: 1 + sum(r >= c for c in cuts) for k, cuts in CUTS.items()})


def _default_responder(body: dict) -> tuple[int, str]:
    user = next((m["content"] for m in body.get("messages", []) if m.get("role") == "user"), "")
    gen, ref = extract_captions(user)
    return 200, render_scores(mock_judge(JudgeRequest(gen, ref)))


class MockJudgeServer:
    """Local chat-completions endpoint with the same wire shape as the real one.

    ``script`` is an optional queue of ``(status, text)`` replies consumed in
    order before falling back to ``responder``. Status ``0`` closes the
    connection without replying. Counters record total requests and the peak
    number of requests in flight.
    """

    def __init__(
        self,
        responder: Callable[[dict], tuple[int, str]] | None = None,
        script: list[tuple[int, str]] | None = None,
        delay: float = 0.0,
    ):
        self.responder = responder or _default_responder
        self.script = deque(script or [])
        self.delay = delay
        self.requests: list[dict] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        assert self._httpd is not None, "server not started"
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with server._lock:
                    server.requests.append(body)
                    server.in_flight += 1
                    server.max_in_flight = max(server.max_in_flight, server.in_flight)
                    reply = server.script.popleft() if server.script else None
                try:
                    if server.delay:
                        time.sleep(server.delay)
                    status, text = reply if reply is not None else server.responder(body)
                    if status == 0:
                        self.close_connection = True
                        return
                    payload = json.dumps(
                        {
                            "object": "chat.completion",
                            "model": body.get("model", "mock"),
                            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
                        }
                    ).encode()
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                finally:
                    with server._lock:
                        server.in_flight -= 1

        return Handler

    def start(self) -> "MockJudgeServer":
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None

    def __enter__(self) -> "MockJudgeServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

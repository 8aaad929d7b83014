"""HTTP service exposing a truncated-ranking API over a local oracle.

Wire protocol::

    POST /v1/query
    {"token": str, "query": [float, ...], "top_k": int}
    -> 200 {"ranking": [str, ...]}
    -> 400 {"error": "bad_request", "detail": str}
    -> 429 {"error": "budget_exhausted", "detail": str}

Similarity scores are never serialized.
"""
from __future__ import annotations

import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional

import numpy as np

from .database import EmbeddingDatabase, RankingModel, rank

log = logging.getLogger(__name__)

QUERY_PATH = "/v1/query"
MAX_BODY_BYTES = 64 * 1024 * 1024


class DailyBudgets:
    """Per-token query counters that reset at each UTC day boundary."""

    def __init__(self, limit: Optional[int], clock: Callable[[], float] = time.time):
        self.limit = limit
        self._clock = clock
        self._lock = threading.Lock()
        self._day = None
        self._used: dict[str, int] = {}

    def try_charge(self, token: str) -> bool:
        with self._lock:
            day = int(self._clock() // 86400)
            if day != self._day:
                self._day = day
                self._used.clear()
            used = self._used.get(token, 0)
            if self.limit is not None and used >= self.limit:
                return False
            self._used[token] = used + 1
            return True

    def used(self, token: str) -> int:
        with self._lock:
            return self._used.get(token, 0)


class _BadRequest(Exception):
    pass


class RankingServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, model: RankingModel, db: EmbeddingDatabase,
                 visible_range: Optional[int] = None, per_client_limit: Optional[int] = None):
        super().__init__(address, _Handler)
        self.model = model
        self.db = db
        self.visible_range = visible_range
        self.budgets = DailyBudgets(per_client_limit)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def handle_query(self, payload) -> list:
        if not isinstance(payload, dict):
            raise _BadRequest("body must be a JSON object")
        token = payload.get("token")
        if not isinstance(token, str) or not token:
            raise _BadRequest("'token' must be a non-empty string")
        query = payload.get("query")
        if not isinstance(query, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in query):
            raise _BadRequest("'query' must be a list of numbers")
        if len(query) != self.model.input_dim:
            raise _BadRequest(f"'query' must have {self.model.input_dim} elements, got {len(query)}")
        q = np.array(query, dtype=np.float64)
        if not np.all(np.isfinite(q)) or q.min() < 0.0 or q.max() > 1.0:
            raise _BadRequest("'query' elements must be finite and lie in [0, 1]")
        top_k = payload.get("top_k", self.visible_range)
        if top_k is not None and (not isinstance(top_k, int) or isinstance(top_k, bool) or top_k < 1):
            raise _BadRequest("'top_k' must be a positive integer")
        n = top_k
        if self.visible_range is not None:
            n = self.visible_range if n is None else min(n, self.visible_range)
        if not self.budgets.try_charge(token):
            raise BudgetError(f"daily limit of {self.budgets.limit} queries reached")
        return list(rank(self.model, self.db, q, n))


class BudgetError(Exception):
    pass


class _Handler(BaseHTTPRequestHandler):
    server: RankingServer
    protocol_version = "HTTP/1.1"
    # headers and body go out in separate writes; avoid the delayed-ACK stall
    disable_nagle_algorithm = True

    def log_message(self, fmt, *args):
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: dict):
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self):
        if self.path != QUERY_PATH:
            self._send(404, {"error": "bad_request", "detail": f"unknown path {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            if length <= 0 or length > MAX_BODY_BYTES:
                raise _BadRequest("missing or oversized body")
            try:
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise _BadRequest(f"malformed JSON: {exc}") from None
            ranking = self.server.handle_query(payload)
        except _BadRequest as exc:
            self._send(400, {"error": "bad_request", "detail": str(exc)})
        except BudgetError as exc:
            self._send(429, {"error": "budget_exhausted", "detail": str(exc)})
        else:
            self._send(200, {"ranking": [str(c) for c in ranking]})

    def do_GET(self):
        self._send(405, {"error": "bad_request", "detail": "use POST /v1/query"})


def serve(db: EmbeddingDatabase, model: RankingModel, host: str = "127.0.0.1", port: int = 0,
          visible_range: Optional[int] = None, per_client_limit: Optional[int] = 500,
          background: bool = True) -> RankingServer:
    """Start a ranking server; ``port=0`` picks a free port.

    With ``background=True`` the server runs in a daemon thread and is
    returned immediately; call ``shutdown()`` then ``server_close()`` to stop.
    """
    server = RankingServer((host, port), model, db, visible_range, per_client_limit)
    if background:
        thread = threading.Thread(target=server.serve_forever, name="ranking-server", daemon=True)
        thread.start()
    else:
        try:
            server.serve_forever()
        finally:
            server.server_close()
    return server

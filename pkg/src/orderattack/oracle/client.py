from __future__ import annotations

import logging
import os
import time
from typing import Optional

import numpy as np
import requests

from ..core import BudgetExhausted, OrderAttackError, RankingList
from .local import QueryBudget
from .server import QUERY_PATH

log = logging.getLogger(__name__)

TOKEN_ENV = "ORDERATTACK_TOKEN"


class TransportError(OrderAttackError):
    pass


class ProtocolError(OrderAttackError):
    """The server answered with something that does not follow the wire format."""


class RemoteBudgetExhausted(BudgetExhausted):
    pass


class RemoteOracle:
    """Client for a ranking server; same contract as :class:`LocalOracle`."""

    def __init__(self, endpoint: str, token: Optional[str] = None,
                 top_k: Optional[int] = None, budget: Optional[int] = None,
                 retries: int = 3, backoff: float = 0.05, timeout: float = 30.0,
                 session: Optional[requests.Session] = None):
        self.url = endpoint.rstrip("/")
        if not self.url.endswith(QUERY_PATH):
            self.url += QUERY_PATH
        self.token = token or os.environ.get(TOKEN_ENV, "anonymous")
        self.visible_range = top_k
        self.budget = QueryBudget(budget)
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self._session = session or requests.Session()

    def close(self):
        self._session.close()

    def _post(self, body: dict) -> requests.Response:
        last = None
        for attempt in range(self.retries + 1):
            try:
                return self._session.post(self.url, json=body, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = exc
                log.warning("query to %s failed (attempt %d): %s", self.url, attempt + 1, exc)
                time.sleep(self.backoff * 2 ** attempt)
        raise TransportError(f"{self.url} unreachable after {self.retries + 1} attempts: {last}")

    def query(self, q) -> RankingList:
        q = np.asarray(q, dtype=np.float64)
        self.budget.charge(1)
        body = {"token": self.token, "query": q.tolist(), "top_k": self.visible_range}
        resp = self._post(body)
        try:
            payload = resp.json()
        except ValueError:
            raise ProtocolError(f"non-JSON response (HTTP {resp.status_code})") from None
        if not isinstance(payload, dict):
            raise ProtocolError("response is not a JSON object")
        if resp.status_code != 200:
            err, detail = payload.get("error"), payload.get("detail", "")
            if err == "budget_exhausted":
                raise RemoteBudgetExhausted(detail)
            if err == "bad_request":
                raise ProtocolError(f"server rejected request: {detail}")
            raise ProtocolError(f"unexpected HTTP {resp.status_code}: {payload!r}")
        ranking = payload.get("ranking")
        if not isinstance(ranking, list) or not all(isinstance(c, str) for c in ranking):
            raise ProtocolError("'ranking' must be a list of strings")
        try:
            return RankingList(tuple(ranking))
        except ValueError as exc:
            raise ProtocolError(str(exc)) from None

    def query_batch(self, queries) -> list[RankingList]:
        return [self.query(q) for q in np.atleast_2d(queries)]


def remote_query(endpoint, q, token: Optional[str] = None, top_k: Optional[int] = None) -> RankingList:
    oracle = RemoteOracle(endpoint, token=token, top_k=top_k)
    try:
        return oracle.query(q)
    finally:
        oracle.close()

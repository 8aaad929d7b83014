from __future__ import annotations

import threading
from typing import Optional

import numpy as np

from ..core import BudgetExhausted, RankingList
from .database import EmbeddingDatabase, RankingModel, rank, rank_batch


class QueryBudget:
    """Thread-safe, monotone query counter with an optional hard limit."""

    def __init__(self, limit: Optional[int] = None):
        if limit is not None and limit < 0:
            raise ValueError("budget limit must be non-negative")
        self.limit = limit
        self._used = 0
        self._lock = threading.Lock()

    @property
    def used(self) -> int:
        return self._used

    @property
    def remaining(self) -> Optional[int]:
        if self.limit is None:
            return None
        return self.limit - self._used

    @property
    def exhausted(self) -> bool:
        return self.limit is not None and self._used >= self.limit

    def charge(self, n: int = 1) -> None:
        """Consume ``n`` units or raise :class:`BudgetExhausted` without consuming any."""
        with self._lock:
            if self.limit is not None and self._used + n > self.limit:
                raise BudgetExhausted(
                    f"query budget exhausted ({self._used}/{self.limit} used, {n} requested)")
            self._used += n

    def __repr__(self):
        return f"QueryBudget(limit={self.limit}, used={self._used})"


class LocalOracle:
    """Black-box view of a ranking model: IDs of the top-N results, never scores."""

    def __init__(self, model: RankingModel, db: EmbeddingDatabase,
                 visible_range: Optional[int] = None, budget: Optional[int] = None):
        if len(db) == 0:
            raise ValueError("empty database")
        if db.dim != model.embed_dim:
            raise ValueError("database and model embedding dimensions differ")
        self.model = model
        self.db = db
        self.visible_range = visible_range
        self.budget = QueryBudget(budget)

    @property
    def input_dim(self) -> int:
        return self.model.input_dim

    def query(self, q) -> RankingList:
        self.budget.charge(1)
        return rank(self.model, self.db, q, self.visible_range)

    def query_batch(self, queries) -> list[RankingList]:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        self.budget.charge(len(queries))
        return rank_batch(self.model, self.db, queries, self.visible_range)


def oracle_query(oracle, q) -> RankingList:
    return oracle.query(q)

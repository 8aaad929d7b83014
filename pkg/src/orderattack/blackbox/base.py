from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..core import (AttackResult, BudgetExhausted, Perturbation, check_candidates,
                    check_permutation, check_query, clamp_to_feasible)
from ..metrics import compute_src


class SurrogateObjective:
    """Correlation of the oracle's answer with the desired candidate order.

    Every evaluated query costs exactly one unit of the oracle's budget.
    """

    def __init__(self, oracle, candidates: Sequence, permutation: Sequence[int]):
        self.oracle = oracle
        self.candidates = check_candidates(candidates)
        self.permutation = check_permutation(permutation, len(self.candidates))

    @property
    def remaining(self) -> Optional[int]:
        return self.oracle.budget.remaining

    @property
    def used(self) -> int:
        return self.oracle.budget.used

    def score(self, ranking) -> float:
        return compute_src(self.candidates, self.permutation, ranking)

    def __call__(self, q) -> float:
        return self.score(self.oracle.query(q))

    def evaluate(self, queries) -> np.ndarray:
        rankings = self.oracle.query_batch(queries)
        return np.array([self.score(r) for r in rankings])


def expand_reduced(r_low, low_shape, full_shape) -> np.ndarray:
    """Nearest-neighbour upsampling of a flat low-resolution perturbation.

    Shapes are ``(channels, height, width)``; each full-resolution pixel takes
    the value of the low-resolution pixel covering it.  Works on a single
    flat vector or a batch of them.
    """
    low_shape, full_shape = tuple(low_shape), tuple(full_shape)
    if len(low_shape) != len(full_shape):
        raise ValueError(f"shape ranks differ: {low_shape} vs {full_shape}")
    if any(lo < 1 or lo > hi for lo, hi in zip(low_shape, full_shape)):
        raise ValueError(f"reduced shape {low_shape} must be within full shape {full_shape}")
    r_low = np.asarray(r_low, dtype=np.float64)
    lead = r_low.shape[:-1]
    if r_low.shape[-1] != int(np.prod(low_shape)):
        raise ValueError(f"vector of length {r_low.shape[-1]} does not match {low_shape}")
    if low_shape == full_shape:
        return r_low.copy()
    x = r_low.reshape(lead + low_shape)
    for axis, (lo, hi) in enumerate(zip(low_shape, full_shape)):
        if lo != hi:
            idx = (np.arange(hi) * lo) // hi
            x = np.take(x, idx, axis=len(lead) + axis)
    return x.reshape(lead + (-1,))


class _Stop(Exception):
    pass


class _Session:
    """Tracks budget, feasibility and the best perturbation seen during one attack."""

    def __init__(self, objective: SurrogateObjective, q, epsilon, low_shape=None, full_shape=None):
        if objective.remaining is None:
            raise ValueError("black-box attacks need a finite query budget")
        self.objective = objective
        self.q = q
        self.epsilon = float(epsilon)
        self.low_shape = low_shape
        self.full_shape = full_shape
        self.reduced = low_shape is not None and tuple(low_shape) != tuple(full_shape)
        self.dim = int(np.prod(low_shape)) if self.reduced else q.size
        self.start_used = objective.used
        self.best_delta = np.zeros_like(q)
        self.best_score = -np.inf
        self.evaluations = 0
        self.trace = []

    def project(self, r) -> np.ndarray:
        """Keep the search variable feasible in its own space."""
        if self.reduced:
            return np.clip(r, -self.epsilon, self.epsilon)
        return clamp_to_feasible(self.q, r, self.epsilon)

    def materialize(self, r) -> np.ndarray:
        if self.reduced:
            r = expand_reduced(r, self.low_shape, self.full_shape)
        return clamp_to_feasible(self.q, r, self.epsilon)

    def evaluate(self, batch) -> np.ndarray:
        """Score a batch of search-space points.

        Raises ``_Stop`` once the budget is gone; points evaluated before
        that still count towards the best-so-far.
        """
        batch = np.atleast_2d(batch)
        remaining = self.objective.remaining
        if remaining <= 0:
            raise _Stop
        take = min(len(batch), remaining)
        deltas = self.materialize(batch[:take])
        try:
            scores = self.objective.evaluate(self.q + deltas)
        except BudgetExhausted:
            raise _Stop from None
        self.evaluations += take
        i = int(np.argmax(scores))
        if scores[i] > self.best_score:
            self.best_score = float(scores[i])
            self.best_delta = deltas[i].copy()
        self.trace.append((self.evaluations, self.best_score))
        if take < len(batch):
            raise _Stop
        return scores

    @property
    def queries_used(self) -> int:
        return self.objective.used - self.start_used


class BlackBoxOrderAttack(TransformerMixin, BaseEstimator):
    """Common driver for the score-free black-box optimizers.

    Subclasses implement ``_search(session, rng)``; the base class handles the
    zero baseline, budget accounting and best-so-far bookkeeping.
    """

    def _check_common(self):
        if float(self.epsilon) < 0:
            raise ValueError("epsilon must be non-negative")
        if int(self.batch_size) < 1:
            raise ValueError("batch_size must be at least 1")
        if self.init not in ("zero", "uniform"):
            raise ValueError(f"init must be 'zero' or 'uniform', got {self.init!r}")

    def _initial_point(self, session: _Session, rng) -> np.ndarray:
        if self.init == "zero":
            return np.zeros(session.dim)
        return session.project(rng.uniform(-session.epsilon, session.epsilon, session.dim))

    def fit(self, X, *, objective: SurrogateObjective):
        self._check_common()
        q = check_query(X)
        rng = np.random.default_rng(self.random_state)
        low_shape = full_shape = None
        if self.reduced_shape is not None:
            if self.image_shape is None:
                raise ValueError("reduced_shape requires image_shape")
            full_shape = tuple(self.image_shape)
            low_shape = tuple(self.reduced_shape)
            if int(np.prod(full_shape)) != q.size:
                raise ValueError(f"image_shape {full_shape} does not match query size {q.size}")
        session = _Session(objective, q, self.epsilon, low_shape, full_shape)
        try:
            start = self._initial_point(session, rng)
            session.evaluate(start[None, :])
            self._search(session, rng, start)
        except _Stop:
            pass
        self.perturbation_ = Perturbation(session.best_delta, float(self.epsilon))
        self.tau_s_ = session.best_score
        self.queries_used_ = session.queries_used
        self.trace_ = session.trace
        return self

    def _search(self, session: _Session, rng, start):
        raise NotImplementedError

    def transform(self, X):
        check_is_fitted(self, "perturbation_")
        return np.clip(np.asarray(X, dtype=np.float64) + self.perturbation_.delta, 0.0, 1.0)

    def result(self, mean_rank=None) -> AttackResult:
        check_is_fitted(self, "perturbation_")
        return AttackResult(self.perturbation_, self.tau_s_, mean_rank, self.queries_used_,
                            list(self.trace_))

"""Shared value types for order attacks.

Conventions used across the package:

* queries are flat float vectors in ``[0, 1]^D``;
* rank values are zero-based (the first entry of a ranking has rank 0);
* permutations are zero-based index vectors into the candidate list, so
  ``permutation = [0, 4, 3, 2, 1]`` asks for ``c0 < c4 < c3 < c2 < c1``;
* an unbounded visible range is spelled ``None``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np

CandidateId = Hashable


class OrderAttackError(Exception):
    """Base class for errors raised by this package."""


class BudgetExhausted(OrderAttackError):
    """The oracle refused a query because the attack budget is spent."""


class DimensionMismatch(OrderAttackError, ValueError):
    pass


def parse_epsilon(value) -> Fraction | float:
    """Accept ``"4/255"``, ``"0.0157"``, ``4/255`` and friends.

    Fraction strings are kept as exact :class:`~fractions.Fraction`.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            return Fraction(text)
        return float(text)
    return float(value)


def format_epsilon(value) -> str | float:
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    return float(value)


def check_query(q, dim: Optional[int] = None) -> np.ndarray:
    """Validate a query image and return it as a 1-d float64 array."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size == 0:
        raise ValueError(f"query must be a non-empty flat vector, got shape {q.shape}")
    if dim is not None and q.size != dim:
        raise DimensionMismatch(f"query has {q.size} elements, expected {dim}")
    if not np.all(np.isfinite(q)):
        raise ValueError("query contains non-finite values")
    if q.min() < 0.0 or q.max() > 1.0:
        raise ValueError("query elements must lie in [0, 1]")
    return q


def check_permutation(permutation, k: Optional[int] = None) -> tuple[int, ...]:
    perm = tuple(int(i) for i in permutation)
    if k is not None and len(perm) != k:
        raise ValueError(f"permutation has length {len(perm)}, expected {k}")
    if sorted(perm) != list(range(len(perm))):
        raise ValueError(f"permutation {perm} is not a bijection on 0..{len(perm) - 1}")
    return perm


def check_candidates(candidates) -> tuple:
    cands = tuple(candidates)
    if len(set(cands)) != len(cands):
        raise ValueError("candidate list contains duplicates")
    return cands


def clamp_to_feasible(q, r, epsilon) -> np.ndarray:
    """Project ``r`` onto ``{r : ||r||_inf <= eps, q + r in [0, 1]^D}``.

    Works on a single vector or on a batch of row vectors sharing ``q``.
    """
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != q.shape[-1]:
        raise DimensionMismatch(
            f"perturbation has {r.shape[-1]} elements, query has {q.shape[-1]}")
    eps = float(epsilon)
    if eps < 0:
        raise ValueError("epsilon must be non-negative")
    # the two boxes always intersect (0 is feasible), so per-coordinate
    # clipping to their intersection is the exact projection
    lo = np.maximum(-eps, -q)
    hi = np.minimum(eps, 1.0 - q)
    return np.clip(r, lo, hi)


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray
    epsilon: float

    @classmethod
    def feasible(cls, q, r, epsilon) -> "Perturbation":
        return cls(clamp_to_feasible(q, r, epsilon), float(epsilon))

    @classmethod
    def zeros(cls, dim: int, epsilon) -> "Perturbation":
        return cls(np.zeros(dim), float(epsilon))

    def apply(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=np.float64) + self.delta, 0.0, 1.0)

    @property
    def linf(self) -> float:
        return float(np.abs(self.delta).max()) if self.delta.size else 0.0


@dataclass(frozen=True)
class RankingList:
    """A truncated top-N ranking: candidate IDs in rank order."""

    entries: tuple

    def __post_init__(self):
        if not isinstance(self.entries, tuple):
            object.__setattr__(self, "entries", tuple(self.entries))
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("ranking list contains duplicate IDs")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, item):
        return self.entries[item]

    def ranks_of(self, ids: Iterable) -> dict:
        """Map each requested ID to its zero-based rank; absent IDs are omitted."""
        wanted = set(ids)
        out = {}
        for position, cid in enumerate(self.entries):
            if cid in wanted:
                out[cid] = position
                if len(out) == len(wanted):
                    break
        return out


@dataclass(frozen=True)
class AttackSpec:
    candidates: tuple
    permutation: tuple
    epsilon: Fraction | float
    query_budget: int = 1000
    visible_range: Optional[int] = None
    margin_gamma: float = 0.0
    xi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "candidates", check_candidates(self.candidates))
        object.__setattr__(self, "permutation",
                           check_permutation(self.permutation, len(self.candidates)))
        if self.visible_range is not None and len(self.candidates) > self.visible_range:
            raise ValueError("k must not exceed the visible range N")
        if float(self.epsilon) < 0:
            raise ValueError("epsilon must be non-negative")
        if self.query_budget < 1:
            raise ValueError("query budget must be positive")
        if self.margin_gamma < 0 or self.xi < 0:
            raise ValueError("margin_gamma and xi must be non-negative")

    @property
    def k(self) -> int:
        return len(self.candidates)

    @property
    def ordered_candidates(self) -> tuple:
        """Candidates in the attacker's desired order."""
        return tuple(self.candidates[i] for i in self.permutation)


@dataclass
class AttackResult:
    perturbation: Perturbation
    tau_s: float
    mean_rank: Optional[float]
    queries_used: int
    trace: list = field(default_factory=list)

    def to_dict(self, include_delta: bool = False) -> dict:
        out = {
            "tau_s": self.tau_s,
            "mean_rank": self.mean_rank,
            "queries_used": self.queries_used,
            "epsilon": self.perturbation.epsilon,
            "linf": self.perturbation.linf,
            "trace": [list(t) for t in self.trace],
        }
        if include_delta:
            out["delta"] = self.perturbation.delta.tolist()
        return out


def mean_rank(ranking: RankingList | Sequence, candidates: Sequence,
              visible_range: Optional[int] = None) -> Optional[float]:
    """Average zero-based rank of ``candidates`` within ``ranking``.

    Returns ``None`` (undefined) when some candidate is missing from a
    bounded ranking.
    """
    if len(candidates) == 0:
        raise ValueError("candidate list is empty")
    if not isinstance(ranking, RankingList):
        ranking = RankingList(tuple(ranking))
    ranks = ranking.ranks_of(candidates)
    if len(ranks) < len(set(candidates)):
        if visible_range is None:
            missing = set(candidates) - set(ranks)
            raise ValueError(f"candidates {sorted(map(str, missing))} absent from an "
                             "unbounded ranking")
        return None
    return math.fsum(ranks[c] for c in candidates) / len(candidates)

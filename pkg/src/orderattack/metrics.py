"""Short-range ranking correlation and plain Kendall tau."""
from __future__ import annotations

from functools import lru_cache
from typing import Sequence

import numpy as np

from .core import RankingList, check_candidates, check_permutation


def compute_src(candidates: Sequence, permutation: Sequence[int], ranking,
                return_matrix: bool = False):
    """Short-range ranking correlation of ``ranking`` against the desired order.

    The candidates are first reordered by ``permutation`` (zero-based) into
    the attacker's desired order.  Every pair ``(i, j)`` with ``j < i`` in
    that order scores +1 when the ranking places them in the same relative
    order, -1 when it reverses them, and -1 when either one is missing from
    the (possibly truncated) ranking.  The result is the mean score over
    all ``k(k-1)/2`` pairs, so it lies in ``[-1, 1]``.

    With ``return_matrix=True`` the lower-triangular score matrix is returned
    as well, as ``(tau_s, S)``.
    """
    cands = check_candidates(candidates)
    k = len(cands)
    if k < 2:
        raise ValueError("need at least two candidates to form a pair")
    perm = check_permutation(permutation, k)
    desired = [cands[i] for i in perm]

    if isinstance(ranking, RankingList):
        ranks = ranking.ranks_of(desired)
    else:
        ranks = RankingList(tuple(ranking)).ranks_of(desired)
    # missing candidates are marked with -1
    pos = [ranks.get(c, -1) for c in desired]

    pos = np.array(pos)
    lower = _lower_mask(k)
    present = pos >= 0
    # concordant: both present and the later-desired item ranks lower
    S = np.where((pos[:, None] > pos[None, :]) & present[:, None] & present[None, :], 1, -1)
    S = np.where(lower, S, 0).astype(np.int8)
    tau = int(S.sum()) / (k * (k - 1) / 2)
    return (tau, S) if return_matrix else tau


@lru_cache(maxsize=64)
def _lower_mask(k: int) -> np.ndarray:
    return np.tri(k, k, -1, dtype=bool)


def kendall_tau(order_a: Sequence, order_b: Sequence) -> float:
    """Kendall's tau between two strict orders over the same items.

    Both arguments list the same items, each in its own order.
    """
    a, b = list(order_a), list(order_b)
    if len(a) != len(b):
        raise ValueError(f"orders differ in length: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least two items")
    if set(a) != set(b) or len(set(a)) != len(a):
        raise ValueError("orders must be arrangements of the same distinct items")
    where = {item: i for i, item in enumerate(b)}
    seq = [where[item] for item in a]
    n = len(seq)
    s = 0
    for i in range(n):
        for j in range(i + 1, n):
            s += 1 if seq[j] > seq[i] else -1
    return s / (n * (n - 1) / 2)


def concordant_fraction(tau_s: float) -> float:
    """Fraction of concordant pairs implied by a correlation value.

    Only meaningful when no pair was scored as out-of-range.
    """
    if not -1.0 <= tau_s <= 1.0:
        raise ValueError("tau_s must lie in [-1, 1]")
    return (tau_s + 1.0) / 2.0

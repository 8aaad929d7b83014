"""Triplet-style order losses and the sign-PGD white-box attack."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import (AttackResult, AttackSpec, Perturbation, check_candidates, check_permutation,
                   check_query, clamp_to_feasible, mean_rank)
from .metrics import compute_src
from .oracle.database import EmbeddingDatabase, RankingModel, rank


@dataclass(frozen=True)
class WhiteboxLossConfig:
    xi: float = 0.0
    margin_gamma: float = 0.0
    qa_distractor_count: int = 256

    def __post_init__(self):
        if not np.isfinite(self.xi) or self.xi < 0:
            raise ValueError("xi must be finite and non-negative")
        if self.margin_gamma < 0:
            raise ValueError("margin_gamma must be non-negative")
        if self.qa_distractor_count < 1:
            raise ValueError("qa_distractor_count must be positive")


@dataclass(frozen=True)
class PgdConfig:
    eta: float = 1 / 255
    steps: int = 24

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.steps < 1:
            raise ValueError("steps must be positive")


def _distances_and_units(model: RankingModel, q, emb):
    """Distances from g(q) to each embedding row, and the unit residuals."""
    v = model.weights @ q
    diff = v - emb
    f = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    units = np.zeros_like(diff)
    nz = f > 0
    # a zero distance has no direction; its subgradient is taken as 0
    units[nz] = diff[nz] / f[nz, None]
    return f, units


def loss_reo(model: RankingModel, q_tilde, candidate_embeddings, permutation,
             margin_gamma: float = 0.0):
    """Relative-order hinge loss and its gradient w.r.t. the query.

    Sums ``[f(q, c_pi) - f(q, c_pj) + margin]^+`` over all ``i < j`` in the
    desired order.  ``candidate_embeddings`` holds one row per candidate in
    their original order; ``permutation`` is zero-based.
    """
    q = np.asarray(q_tilde, dtype=np.float64)
    emb = np.asarray(candidate_embeddings, dtype=np.float64)
    perm = check_permutation(permutation, len(emb))
    if len(emb) < 2:
        raise ValueError("need k >= 2")
    emb = emb[list(perm)]
    f, units = _distances_and_units(model, q, emb)
    hinge = f[:, None] - f[None, :] + margin_gamma
    active = np.triu(hinge > 0, k=1)
    value = float(hinge[active].sum())
    weight = active.sum(axis=1) - active.sum(axis=0)
    grad = model.weights.T @ (weight @ units)
    return value, grad


def loss_qa_plus(model: RankingModel, q_tilde, candidate_embeddings, distractor_embeddings):
    """Hinge loss keeping every candidate closer than every distractor."""
    q = np.asarray(q_tilde, dtype=np.float64)
    cemb = np.asarray(candidate_embeddings, dtype=np.float64)
    demb = np.asarray(distractor_embeddings, dtype=np.float64)
    if demb.size == 0:
        return 0.0, np.zeros_like(q)
    fc, uc = _distances_and_units(model, q, cemb)
    fx, ux = _distances_and_units(model, q, demb.reshape(-1, cemb.shape[1]))
    hinge = fc[:, None] - fx[None, :]
    active = hinge > 0
    value = float(hinge[active].sum())
    wc = active.sum(axis=1)
    wx = active.sum(axis=0)
    grad = model.weights.T @ (wc @ uc - wx @ ux)
    return value, grad


def loss_oa(model: RankingModel, q_tilde, candidate_embeddings, permutation,
            cfg: WhiteboxLossConfig, distractor_embeddings=None):
    """``loss_reo + xi * loss_qa_plus`` with the matching gradient."""
    value, grad = loss_reo(model, q_tilde, candidate_embeddings, permutation, cfg.margin_gamma)
    if cfg.xi == 0 or distractor_embeddings is None:
        return value, grad
    qa_value, qa_grad = loss_qa_plus(model, q_tilde, candidate_embeddings, distractor_embeddings)
    return value + cfg.xi * qa_value, grad + cfg.xi * qa_grad


def finite_difference_gradient(fn: Callable, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    ``fn`` may return a scalar or a ``(value, ...)`` tuple.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)

    def scalar(z):
        out = fn(z)
        return float(out[0] if isinstance(out, tuple) else out)

    grad = np.empty_like(x)
    step = np.zeros_like(x)
    for i in range(x.size):
        step[i] = h
        grad[i] = (scalar(x + step) - scalar(x - step)) / (2 * h)
        step[i] = 0.0
    return grad


def sample_distractors(db: EmbeddingDatabase, candidates, count: int, rng) -> tuple:
    """Uniformly pick ``count`` IDs from the database outside the candidate set."""
    cset = set(candidates)
    pool = [cid for cid in db.ids if cid not in cset]
    count = min(count, len(pool))
    picks = rng.choice(len(pool), size=count, replace=False)
    return tuple(pool[i] for i in np.sort(picks))


class PGDOrderAttack(TransformerMixin, BaseEstimator):
    """White-box order attack: sign-PGD on the combined order loss.

    ``fit`` learns a perturbation for one query; ``transform`` applies it.

    Parameters
    ----------
    epsilon : float
        L-infinity budget of the perturbation.
    eta : float
        Step size; the default is one intensity level.
    steps : int
    xi : float
        Weight of the term keeping candidates ahead of other database entries.
    margin_gamma : float
    qa_distractor_count : int
        Number of non-candidate entries sampled (once per attack) for that term.
    quantize : bool
        Round the perturbation to multiples of 1/255 after every step.
    random_state : int or None
        Seeds the distractor sample.
    """

    def __init__(self, epsilon=4 / 255, eta=1 / 255, steps=24, xi=0.0, margin_gamma=0.0,
                 qa_distractor_count=256, quantize=False, random_state=None):
        self.epsilon = epsilon
        self.eta = eta
        self.steps = steps
        self.xi = xi
        self.margin_gamma = margin_gamma
        self.qa_distractor_count = qa_distractor_count
        self.quantize = quantize
        self.random_state = random_state

    def fit(self, X, *, model: RankingModel, db: EmbeddingDatabase, candidates, permutation,
            visible_range: Optional[int] = None, callback: Optional[Callable] = None):
        q = check_query(X, model.input_dim)
        cands = check_candidates(candidates)
        perm = check_permutation(permutation, len(cands))
        eps = float(self.epsilon)
        pgd = PgdConfig(float(self.eta), int(self.steps))
        cfg = WhiteboxLossConfig(float(self.xi), float(self.margin_gamma),
                                 int(self.qa_distractor_count))
        cemb = db.embeddings[db.subset_indices(cands)]
        demb = None
        if cfg.xi > 0:
            rng = np.random.default_rng(self.random_state)
            distractors = sample_distractors(db, cands, cfg.qa_distractor_count, rng)
            demb = db.embeddings[db.subset_indices(distractors)]

        r = np.zeros_like(q)
        trace = []
        for t in range(1, pgd.steps + 1):
            value, grad = loss_oa(model, q + r, cemb, perm, cfg, demb)
            trace.append((t, value))
            r = clamp_to_feasible(q, r - pgd.eta * np.sign(grad), eps)
            if self.quantize:
                r = clamp_to_feasible(q, np.round(r * 255) / 255, eps)
            if callback is not None:
                callback(t, r)

        self.perturbation_ = Perturbation(r, eps)
        q_adv = q + r
        visible = rank(model, db, q_adv, visible_range)
        self.tau_s_ = compute_src(cands, perm, visible)
        self.mean_rank_ = mean_rank(visible, cands, visible_range)
        self.loss_trace_ = trace
        self.n_iter_ = pgd.steps
        return self

    def transform(self, X):
        check_is_fitted(self, "perturbation_")
        X = np.asarray(X, dtype=np.float64)
        return np.clip(X + self.perturbation_.delta, 0.0, 1.0)

    def result(self) -> AttackResult:
        check_is_fitted(self, "perturbation_")
        return AttackResult(self.perturbation_, self.tau_s_, self.mean_rank_, 0,
                            [(t, v) for t, v in self.loss_trace_])


def pgd_attack(model: RankingModel, db: EmbeddingDatabase, q, spec: AttackSpec,
               pgd: PgdConfig = PgdConfig(), cfg: Optional[WhiteboxLossConfig] = None,
               random_state=None) -> AttackResult:
    """Run the white-box attack described by ``spec``; no oracle queries are spent."""
    if cfg is None:
        cfg = WhiteboxLossConfig(xi=spec.xi, margin_gamma=spec.margin_gamma)
    est = PGDOrderAttack(epsilon=float(spec.epsilon), eta=pgd.eta, steps=pgd.steps, xi=cfg.xi,
                         margin_gamma=cfg.margin_gamma, qa_distractor_count=cfg.qa_distractor_count,
                         random_state=random_state)
    est.fit(q, model=model, db=db, candidates=spec.candidates, permutation=spec.permutation,
            visible_range=spec.visible_range)
    return est.result()

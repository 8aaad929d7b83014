"""Beta-Attack: search over per-pixel Beta distributions with a score-function gradient."""
from __future__ import annotations

import numpy as np
from scipy.special import digamma

from .base import BlackBoxOrderAttack

_TINY = 1e-12


def beta_log_density_grad(z, a, b):
    """Gradient of ``log Beta(z | a, b)`` w.r.t. ``a`` and ``b`` (element-wise)."""
    z = np.clip(np.asarray(z, dtype=np.float64), _TINY, 1.0 - _TINY)
    common = digamma(a + b)
    return common - digamma(a) + np.log(z), common - digamma(b) + np.log1p(-z)


def beta_attack_step(a, b, z, scores, lr: float, floor: float = 1e-3):
    """One stochastic gradient-ascent step on the expected score.

    ``z`` is an ``(H, d)`` batch drawn from ``Beta(a, b)`` and ``scores`` the
    corresponding objective values.
    """
    scores = np.asarray(scores, dtype=np.float64)
    ga, gb = beta_log_density_grad(z, a, b)
    grad_a = (scores[:, None] * ga).mean(axis=0)
    grad_b = (scores[:, None] * gb).mean(axis=0)
    a = np.maximum(a + lr * grad_a, floor)
    b = np.maximum(b + lr * grad_b, floor)
    return a, b


class BetaAttack(BlackBoxOrderAttack):
    """Perturbations ``eps * (2z - 1)`` with ``z_i ~ Beta(a_i, b_i)``.

    Starts from ``a = b = 1`` (uniform, i.e. random search) and adapts the
    shape parameters towards higher expected correlation.
    """

    def __init__(self, epsilon=4 / 255, batch_size=50, lr=3.0, floor=1e-3,
                 reduced_shape=None, image_shape=None, init="zero", random_state=None):
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.lr = lr
        self.floor = floor
        self.reduced_shape = reduced_shape
        self.image_shape = image_shape
        self.init = init
        self.random_state = random_state

    def _search(self, session, rng, start):
        if self.lr < 0 or self.floor <= 0:
            raise ValueError("lr must be non-negative and floor positive")
        eps = session.epsilon
        a = np.ones(session.dim)
        b = np.ones(session.dim)
        self.n_updates_ = 0
        H = int(self.batch_size)
        try:
            while True:
                z = rng.beta(a, b, size=(H, session.dim))
                scores = session.evaluate(eps * (2.0 * z - 1.0))
                a, b = beta_attack_step(a, b, z, scores, float(self.lr), float(self.floor))
                self.n_updates_ += 1
        finally:
            self.shape_a_, self.shape_b_ = a, b

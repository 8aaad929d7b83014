"""Gradient-estimating optimizers: NES (Gaussian probes) and SPSA (Rademacher probes)."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .base import BlackBoxOrderAttack


def antithetic_gradient(evaluate: Callable, r, directions, scale: float) -> np.ndarray:
    """Two-sided finite-difference estimate along the given directions.

    Each direction ``u`` is probed at ``r + scale*u`` and ``r - scale*u``;
    with ``m`` directions (``2m`` evaluations) the estimate is
    ``sum_i (T+ - T-) u_i / (2m * scale)``.
    """
    directions = np.atleast_2d(directions)
    m = len(directions)
    probes = np.empty((2 * m, directions.shape[1]))
    probes[0::2] = r + scale * directions
    probes[1::2] = r - scale * directions
    scores = np.asarray(evaluate(probes), dtype=np.float64)
    diff = scores[0::2] - scores[1::2]
    return diff @ directions / (2 * m * scale)


def nes_step(evaluate: Callable, r, rng, sigma: float, eta: float, batch: int,
             project: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Estimate the gradient with Gaussian probes, then take a projected sign step."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    u = rng.standard_normal((max(batch // 2, 1), len(r)))
    g = antithetic_gradient(evaluate, r, u, sigma)
    return project(r + eta * np.sign(g)), g


def rademacher(rng, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0


def spsa_step(evaluate: Callable, r, rng, delta: float, eta: float, batch: int,
              project: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`nes_step` with probes ``delta * u``, ``u`` uniform on {-1, +1}^d."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    u = rademacher(rng, (max(batch // 2, 1), len(r)))
    g = antithetic_gradient(evaluate, r, u, delta)
    return project(r + eta * np.sign(g)), g


class NESAttack(BlackBoxOrderAttack):
    """Projected sign-gradient ascent with NES gradient estimates.

    ``sigma=None`` uses twice the perturbation budget.
    """

    def __init__(self, epsilon=4 / 255, batch_size=50, lr=2 / 255, sigma=None,
                 reduced_shape=None, image_shape=None, init="zero", random_state=None):
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.lr = lr
        self.sigma = sigma
        self.reduced_shape = reduced_shape
        self.image_shape = image_shape
        self.init = init
        self.random_state = random_state

    def _step(self, session, rng, r):
        sigma = 2.0 * session.epsilon if self.sigma is None else float(self.sigma)
        if sigma == 0:
            # zero budget: every probe is the baseline, nothing to estimate
            sigma = 1.0
        return nes_step(session.evaluate, r, rng, sigma, float(self.lr), int(self.batch_size),
                        session.project)

    def _search(self, session, rng, start):
        r = start
        while True:
            r, _ = self._step(session, rng, r)


class SPSAAttack(NESAttack):
    """Projected sign-gradient ascent with SPSA gradient estimates."""

    def __init__(self, epsilon=4 / 255, batch_size=50, lr=2 / 255, delta=2 / 255,
                 reduced_shape=None, image_shape=None, init="zero", random_state=None):
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.lr = lr
        self.delta = delta
        self.reduced_shape = reduced_shape
        self.image_shape = image_shape
        self.init = init
        self.random_state = random_state

    def _step(self, session, rng, r):
        return spsa_step(session.evaluate, r, rng, float(self.delta), float(self.lr),
                         int(self.batch_size), session.project)

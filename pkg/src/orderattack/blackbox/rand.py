from __future__ import annotations

import numpy as np

from .base import BlackBoxOrderAttack


def rand_search_step(rng, epsilon: float, dim: int, batch: int) -> np.ndarray:
    """Draw ``batch`` perturbations with i.i.d. U(-eps, eps) elements."""
    return rng.uniform(-epsilon, epsilon, size=(batch, dim))


class RandSearchAttack(BlackBoxOrderAttack):
    """Naive random search: keep the best of independent uniform draws."""

    def __init__(self, epsilon=4 / 255, batch_size=50, reduced_shape=None, image_shape=None,
                 init="zero", random_state=None):
        self.epsilon = epsilon
        self.batch_size = batch_size
        self.reduced_shape = reduced_shape
        self.image_shape = image_shape
        self.init = init
        self.random_state = random_state

    def _search(self, session, rng, start):
        eps = session.epsilon
        while True:
            session.evaluate(rand_search_step(rng, eps, session.dim, int(self.batch_size)))

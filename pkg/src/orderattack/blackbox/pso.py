from __future__ import annotations

from typing import Callable

import numpy as np

from .base import BlackBoxOrderAttack


def pso_step(positions, velocities, personal_best, global_best, omega, phi_p, phi_g,
             rand: Callable[[int], np.ndarray], project: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Velocity and position update for the whole swarm.

    ``rand(n)`` returns ``n`` numbers in [0, 1]; one scalar is drawn per
    particle for each of the two attraction terms.
    """
    n = len(positions)
    rp = np.asarray(rand(n), dtype=np.float64)[:, None]
    rg = np.asarray(rand(n), dtype=np.float64)[:, None]
    velocities = (omega * velocities
                  + rp * phi_p * (personal_best - positions)
                  + rg * phi_g * (global_best[None, :] - positions))
    positions = project(positions + velocities)
    return positions, velocities


class PSOAttack(BlackBoxOrderAttack):
    """Particle swarm search over the feasible perturbation set.

    Particles start uniformly in the feasible set with zero velocity; the
    global best starts at the zero-perturbation baseline.
    """

    def __init__(self, epsilon=4 / 255, swarm_size=40, omega=1.1, phi_p=0.57, phi_g=0.44,
                 reduced_shape=None, image_shape=None, init="zero", random_state=None):
        self.epsilon = epsilon
        self.swarm_size = swarm_size
        self.omega = omega
        self.phi_p = phi_p
        self.phi_g = phi_g
        self.reduced_shape = reduced_shape
        self.image_shape = image_shape
        self.init = init
        self.random_state = random_state

    @property
    def batch_size(self):
        return self.swarm_size

    def _search(self, session, rng, start):
        eps = session.epsilon
        n = int(self.swarm_size)
        g = start.copy()
        g_score = session.best_score
        y = session.project(rng.uniform(-eps, eps, size=(n, session.dim)))
        v = np.zeros_like(y)
        scores = session.evaluate(y)
        p, p_score = y.copy(), scores.copy()
        i = int(np.argmax(p_score))
        if p_score[i] > g_score:
            g, g_score = p[i].copy(), p_score[i]
        while True:
            y, v = pso_step(y, v, p, g, self.omega, self.phi_p, self.phi_g, rng.random,
                            session.project)
            scores = session.evaluate(y)
            better = scores > p_score
            p[better] = y[better]
            p_score[better] = scores[better]
            i = int(np.argmax(p_score))
            if p_score[i] > g_score:
                g, g_score = p[i].copy(), p_score[i]

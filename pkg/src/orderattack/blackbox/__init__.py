"""Score-free black-box optimizers maximizing the short-range ranking correlation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..core import AttackResult, AttackSpec
from .base import BlackBoxOrderAttack, SurrogateObjective, expand_reduced
from .beta import BetaAttack, beta_attack_step, beta_log_density_grad
from .gradient import NESAttack, SPSAAttack, antithetic_gradient, nes_step, spsa_step
from .pso import PSOAttack, pso_step
from .rand import RandSearchAttack, rand_search_step

OPTIMIZERS = {
    "rand": RandSearchAttack,
    "beta": BetaAttack,
    "pso": PSOAttack,
    "nes": NESAttack,
    "spsa": SPSAAttack,
}


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "nes"
    batch: int = 50
    lr: float = 2 / 255
    sigma: Optional[float] = None
    delta: float = 2 / 255
    beta_lr: float = 3.0
    pso_omega: float = 1.1
    pso_phi_p: float = 0.57
    pso_phi_g: float = 0.44
    pso_swarm: int = 40
    seed: Optional[int] = None
    reduced_dims: Optional[tuple] = None
    image_shape: Optional[tuple] = None
    init: str = "zero"

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}; choose from {sorted(OPTIMIZERS)}")
        if self.batch < 1 or self.pso_swarm < 1:
            raise ValueError("batch and swarm sizes must be at least 1")
        if self.lr <= 0 or self.delta <= 0 or self.beta_lr < 0:
            raise ValueError("learning rates and delta must be positive")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def build(self, epsilon) -> BlackBoxOrderAttack:
        common = dict(epsilon=float(epsilon), reduced_shape=self.reduced_dims,
                      image_shape=self.image_shape, init=self.init, random_state=self.seed)
        if self.kind == "rand":
            return RandSearchAttack(batch_size=self.batch, **common)
        if self.kind == "beta":
            return BetaAttack(batch_size=self.batch, lr=self.beta_lr, **common)
        if self.kind == "pso":
            return PSOAttack(swarm_size=self.pso_swarm, omega=self.pso_omega,
                             phi_p=self.pso_phi_p, phi_g=self.pso_phi_g, **common)
        if self.kind == "nes":
            return NESAttack(batch_size=self.batch, lr=self.lr, sigma=self.sigma, **common)
        return SPSAAttack(batch_size=self.batch, lr=self.lr, delta=self.delta, **common)


def optimize(objective: SurrogateObjective, q, cfg: OptimizerConfig,
             spec: AttackSpec) -> AttackResult:
    """Run one black-box attack until the oracle's budget is spent.

    The result carries the best perturbation ever evaluated and its score;
    ``mean_rank`` is left undefined because the oracle hides distances.
    """
    if tuple(objective.candidates) != spec.candidates or \
            tuple(objective.permutation) != spec.permutation:
        raise ValueError("objective and spec disagree on candidates or permutation")
    est = cfg.build(spec.epsilon)
    est.fit(q, objective=objective)
    return est.result()


__all__ = [
    "BetaAttack", "BlackBoxOrderAttack", "NESAttack", "OPTIMIZERS", "OptimizerConfig",
    "PSOAttack", "RandSearchAttack", "SPSAAttack", "SurrogateObjective", "antithetic_gradient",
    "beta_attack_step", "beta_log_density_grad", "expand_reduced", "nes_step", "optimize",
    "pso_step", "rand_search_step", "spsa_step",
]

"""Adversarial order attacks against top-k ranking systems."""
from .core import (AttackResult, AttackSpec, BudgetExhausted, DimensionMismatch, OrderAttackError,
                   Perturbation, RankingList, clamp_to_feasible, mean_rank, parse_epsilon)
from .metrics import compute_src, concordant_fraction, kendall_tau
from .oracle import (EmbeddingDatabase, LocalOracle, QueryBudget, RankingModel, RemoteOracle,
                     load_db, rank, save_db, serve)
from .whitebox import PGDOrderAttack, pgd_attack
from .blackbox import (BetaAttack, NESAttack, OptimizerConfig, PSOAttack, RandSearchAttack,
                       SPSAAttack, SurrogateObjective, optimize)
from .harness import ExperimentConfig, run_kn_oa
from .synthetic import gen_synthetic_db

__version__ = "0.1.0"

__all__ = [
    "AttackResult", "AttackSpec", "BetaAttack", "BudgetExhausted", "DimensionMismatch",
    "EmbeddingDatabase", "ExperimentConfig", "LocalOracle", "NESAttack", "OptimizerConfig",
    "OrderAttackError", "PGDOrderAttack", "PSOAttack", "Perturbation", "QueryBudget",
    "RandSearchAttack", "RankingList", "RankingModel", "RemoteOracle", "SPSAAttack",
    "SurrogateObjective", "clamp_to_feasible", "compute_src", "concordant_fraction",
    "gen_synthetic_db", "kendall_tau", "load_db", "mean_rank", "optimize", "parse_epsilon",
    "pgd_attack", "rank", "run_kn_oa", "save_db", "serve",
]

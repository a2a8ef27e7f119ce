from .bandit import BanditIteration, exact_bandit_evolution
from .inference import (EnumeratedSpace, SupportError, ZeroEvidenceError, elbo, evidence, kl,
                        log_evidence, optimal_q)
from .objective import CompiledDataset, Compiler, DatasetError, compile_step
from .train import (EvolResult, IterationRecord, TrainConfig, TrainResult, agent_evol, ascend,
                    bc_train, grad_check, gradient, learn_step, objective_value)

__all__ = [
    "BanditIteration", "CompiledDataset", "Compiler", "DatasetError", "EnumeratedSpace", "EvolResult",
    "IterationRecord", "SupportError", "TrainConfig", "TrainResult", "ZeroEvidenceError", "agent_evol",
    "ascend", "bc_train", "compile_step", "elbo", "evidence", "exact_bandit_evolution", "grad_check",
    "gradient", "kl", "learn_step", "log_evidence", "objective_value", "optimal_q",
]

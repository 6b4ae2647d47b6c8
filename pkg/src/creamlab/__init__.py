"""Consistency-regularised self-rewarding preference training on exactly
solvable tabular policies."""

from ._kernels import BACKEND
from .consistency import ConsistencyReport, consistency_rate, estimate_lambda, kendall_tau, spearman_rho, top_order
from .errors import ConfigError, DataError, DomainError, TrainingError
from .losses import (
    LogRatioPair, LossValue, c_lambda, cream_loss, dpo_loss, kl_penalty_loss,
    preference_objective, reg_loss, regularized_loss, sft_loss,
)
from .pairs import PreferenceRecord, compose_pairs, label_z
from .policy import CandidateBatch, PolicyParams, TaskSpace, sample_batch, sample_candidates
from .rewarding import RankedList, RewardVector, ensemble_reward, intrinsic_reward, likelihood_reward, oracle_reward, rank
from .tasks import SyntheticTask, generate_task, initial_policy, proxy_accuracy
from .trainer import IterationSnapshot, TaskConfig, TrainConfig, run_experiment, run_iteration, sft_stage, two_step_harness

__all__ = [
    "BACKEND", "c_lambda", "CandidateBatch", "compose_pairs", "ConfigError", "consistency_rate",
    "ConsistencyReport", "cream_loss", "DataError", "DomainError", "dpo_loss", "ensemble_reward",
    "estimate_lambda", "generate_task", "initial_policy", "intrinsic_reward", "IterationSnapshot",
    "kendall_tau", "kl_penalty_loss", "label_z", "likelihood_reward", "LogRatioPair", "LossValue",
    "oracle_reward", "PolicyParams", "preference_objective", "PreferenceRecord", "proxy_accuracy",
    "rank", "RankedList", "reg_loss", "regularized_loss", "RewardVector", "run_experiment",
    "run_iteration", "sample_batch", "sample_candidates", "sft_loss", "sft_stage", "spearman_rho",
    "SyntheticTask", "TaskConfig", "TaskSpace", "top_order", "TrainConfig", "TrainingError",
    "two_step_harness",
]

__version__ = "0.1.0"

"""Self-rewards for candidate batches and the rankings they induce."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DataError, DomainError
from .policy import CandidateBatch, PolicyParams

REWARD_MODES = ("dpo_ratio", "likelihood", "oracle_utility", "ensemble_mean", "ensemble_worst")


@dataclass(frozen=True)
class RewardVector:
    """Scores r[j, i] for candidate i of prompt j."""

    scores: np.ndarray
    source: str
    mode: str

    def __post_init__(self):
        if self.mode not in REWARD_MODES:
            raise DomainError(f"unknown reward mode {self.mode!r}")
        object.__setattr__(self, "scores", np.atleast_2d(np.asarray(self.scores, dtype=np.float64)))

    def to_dict(self) -> dict:
        return {"source": self.source, "mode": self.mode, "scores": self.scores.tolist()}


@dataclass(frozen=True)
class RankedList:
    """rank[j, i] = position of candidate i (1 = best) for prompt j."""

    ranks: np.ndarray
    rewards: RewardVector | None = None

    def __post_init__(self):
        object.__setattr__(self, "ranks", np.atleast_2d(np.asarray(self.ranks, dtype=np.int64)))

    def to_dict(self) -> dict:
        doc = {"ranks": self.ranks.tolist()}
        if self.rewards is not None:
            doc["rewards"] = self.rewards.to_dict()
        return doc


def intrinsic_reward(
    policy: PolicyParams, reference: PolicyParams, batch: CandidateBatch
) -> RewardVector:
    """log pi_policy(y|x) - log pi_reference(y|x), read from the batch cache.

    beta and the partition term are dropped; neither changes a ranking.
    """
    scores = batch.logp(_label(policy)) - batch.logp(_label(reference))
    return RewardVector(scores, source=policy.label, mode="dpo_ratio")


def likelihood_reward(policy: PolicyParams, batch: CandidateBatch) -> RewardVector:
    """log pi_policy(y|x); used when the previous checkpoint is the reference itself."""
    return RewardVector(batch.logp(_label(policy)).copy(), source=policy.label, mode="likelihood")


def oracle_reward(task, batch: CandidateBatch) -> RewardVector:
    """Ground-truth utility of each candidate."""
    scores = task.utility[batch.prompts[:, None], batch.responses]
    return RewardVector(scores, source="oracle", mode="oracle_utility")


def ensemble_reward(
    policies, reference: PolicyParams, batch: CandidateBatch, combiner: str = "mean"
) -> RewardVector:
    """Combine per-member intrinsic rewards by their mean or their minimum."""
    if len(policies) == 0:
        raise DomainError("ensemble needs at least one policy")
    stacked = np.stack([intrinsic_reward(p, reference, batch).scores for p in policies])
    return combine_rewards(stacked, combiner, source="+".join(str(p.label) for p in policies))


def combine_rewards(stacked: np.ndarray, combiner: str, source: str = "ensemble") -> RewardVector:
    if combiner == "mean":
        return RewardVector(stacked.mean(axis=0), source=source, mode="ensemble_mean")
    if combiner == "worst":
        return RewardVector(stacked.min(axis=0), source=source, mode="ensemble_worst")
    raise DomainError(f"unknown ensemble combiner {combiner!r}")


def rank(rewards: RewardVector | np.ndarray) -> RankedList:
    """Descending by reward; ties resolved by ascending candidate index."""
    rv = rewards if isinstance(rewards, RewardVector) else None
    scores = rv.scores if rv is not None else np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    if np.isnan(scores).any():
        raise DataError("NaN reward cannot be ranked")
    return RankedList(_kernels.rank_rows(scores), rv)


def _label(policy: PolicyParams) -> str:
    if policy.label is None:
        raise DataError("checkpoint has no label; attach it to the batch first")
    return policy.label

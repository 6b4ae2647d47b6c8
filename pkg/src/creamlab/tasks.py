"""Synthetic prompt/response tasks with known per-response utility."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .policy import PolicyParams, TaskSpace
from .rewarding import RewardVector

UTILITY_DISTRIBUTIONS = ("gap-controlled", "uniform")


@dataclass
class SyntheticTask:
    space: TaskSpace
    utility: np.ndarray
    sft_split: np.ndarray
    noise_level: float = 0.0
    seed: int | None = None
    near_tied: np.ndarray | None = None  # prompts generated with the small margin

    def __post_init__(self):
        self.utility = np.asarray(self.utility, dtype=np.float64)
        self.sft_split = np.asarray(self.sft_split, dtype=np.int64)
        if self.utility.shape != (self.space.num_prompts, self.space.responses_per_prompt):
            raise DomainError("utility matrix does not match the task space")
        if self.sft_split.size == 0:
            raise DomainError("SFT split must be nonempty")
        if self.noise_level < 0:
            raise DomainError("noise level must be >= 0")

    @property
    def best_responses(self) -> np.ndarray:
        # np.argmax returns the first maximiser: ties go to the lower index
        return np.argmax(self.utility, axis=1)

    @property
    def sft_data(self) -> np.ndarray:
        """(prompt, max-utility response) rows for the SFT split."""
        return np.stack([self.sft_split, self.best_responses[self.sft_split]], axis=1)

    def to_dict(self) -> dict:
        doc = {
            "utility": self.utility.tolist(),
            "sft_split": self.sft_split.tolist(),
            "seed": self.seed,
            "noise_level": self.noise_level,
        }
        if self.near_tied is not None:
            doc["near_tied"] = np.asarray(self.near_tied).tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticTask":
        utility = np.asarray(doc["utility"], dtype=np.float64)
        return cls(
            TaskSpace(*utility.shape),
            utility,
            np.asarray(doc["sft_split"], dtype=np.int64),
            float(doc.get("noise_level", 0.0)),
            doc.get("seed"),
            None if doc.get("near_tied") is None else np.asarray(doc["near_tied"], dtype=np.int64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SyntheticTask":
        return cls.from_dict(json.loads(text))


def generate_task(
    num_prompts: int,
    responses_per_prompt: int,
    seed: int,
    utility_distribution: str = "gap-controlled",
    margin: float = 0.3,
    near_tie_fraction: float = 0.0,
    near_tie_margin: float = 0.0,
    sft_fraction: float = 1.0,
    noise_level: float = 0.0,
) -> SyntheticTask:
    """Draw a task reproducibly from ``seed``.

    In gap-controlled mode the best response of each prompt sits exactly
    ``margin`` above the runner-up; a random ``near_tie_fraction`` of prompts
    use ``near_tie_margin`` instead (0 gives an exact tie). Other utilities
    are uniform on [0, 1].
    """
    space = TaskSpace(num_prompts, responses_per_prompt)
    if utility_distribution not in UTILITY_DISTRIBUTIONS:
        raise DomainError(f"unknown utility distribution {utility_distribution!r}")
    if not 0.0 <= near_tie_fraction <= 1.0:
        raise DomainError("near_tie_fraction must lie in [0, 1]")
    if margin < 0 or near_tie_margin < 0:
        raise DomainError("margins must be >= 0")
    if not 0.0 < sft_fraction <= 1.0:
        raise DomainError("sft_fraction must lie in (0, 1]")

    rng = np.random.default_rng(seed)
    v = responses_per_prompt
    near_tied = np.array([], dtype=np.int64)
    if utility_distribution == "uniform":
        utility = rng.random((num_prompts, v))
    else:
        rest = rng.random((num_prompts, v - 1))
        n_tied = int(round(near_tie_fraction * num_prompts))
        near_tied = np.sort(rng.choice(num_prompts, size=n_tied, replace=False))
        margins = np.full(num_prompts, float(margin))
        margins[near_tied] = near_tie_margin
        best = rest.max(axis=1) + margins
        utility = np.concatenate([rest, best[:, None]], axis=1)
        utility = np.take_along_axis(utility, rng.permuted(np.tile(np.arange(v), (num_prompts, 1)), axis=1), axis=1)

    n_sft = max(1, int(round(sft_fraction * num_prompts)))
    sft_split = np.sort(rng.choice(num_prompts, size=n_sft, replace=False))
    return SyntheticTask(space, utility, sft_split, noise_level, seed, near_tied)


def initial_policy(
    task: SyntheticTask, seed: int, scale: float = 1.0, knowledge: float = 0.0, label: str = "M0"
) -> PolicyParams:
    """Starting checkpoint: ``knowledge * utility + scale * N(0, 1)`` logits.

    ``knowledge`` > 0 makes the untrained model weakly informed about quality.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(task.utility.shape)
    return PolicyParams(knowledge * task.utility + scale * noise, label=label)


def proxy_accuracy(policy: PolicyParams, task: SyntheticTask) -> float:
    """Fraction of prompts whose greedy response is the max-utility response."""
    return float(np.mean(np.argmax(policy.logits, axis=1) == task.best_responses))


def perturb_rewards(rewards: RewardVector, noise_level: float, seed) -> RewardVector:
    """Add i.i.d. N(0, noise_level^2) to every score."""
    if noise_level < 0:
        raise DomainError("noise level must be >= 0")
    if noise_level == 0:
        return rewards
    rng = np.random.default_rng(seed)
    noisy = rewards.scores + noise_level * rng.standard_normal(rewards.scores.shape)
    return RewardVector(noisy, source=rewards.source, mode=rewards.mode)


def flip_rate(task: SyntheticTask, records) -> float:
    """Fraction of records whose winner has strictly lower utility than its loser."""
    if not records:
        return 0.0
    u = task.utility
    flips = sum(u[r.prompt, r.winner] < u[r.prompt, r.loser] for r in records)
    return flips / len(records)

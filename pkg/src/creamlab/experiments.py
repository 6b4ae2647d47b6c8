"""Multi-seed comparisons and reward-noise calibration.

``DIRECTIONAL`` is the frozen desk-scale setting for the CREAM-vs-SRLM
comparison: a weakly informed starting model, SFT on 60% of the prompts,
plain gradient steps large enough that a single noisy pair can move a
prompt's greedy answer.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .trainer import TrainConfig, build_task, run_experiment

DIRECTIONAL = {
    "iterations": 3,
    "n_candidates": 5,
    "temperature": 0.8,
    "beta": 0.05,
    "optimizer": "sgd",
    "learning_rate": 250.0,
    "sft_learning_rate": 1.0,
    "sft_epochs": 3,
    "batch_size": 4,
    "init_scale": 0.5,
    "init_knowledge": 2.0,
    "task": {
        "num_prompts": 200,
        "responses_per_prompt": 8,
        "utility_distribution": "gap-controlled",
        "margin": 0.3,
        "near_tie_fraction": 0.3,
        "near_tie_margin": 0.0,
        "sft_fraction": 0.6,
    },
}
DIRECTIONAL_SEEDS = (0, 1, 2, 3, 4)
TARGET_FLIP_RATE = 0.30
# calibrate_noise(directional_config("SRLM")) with the defaults below
DIRECTIONAL_NOISE = 0.46484375


def directional_config(method: str, seed: int = 0, noise_level: float = DIRECTIONAL_NOISE) -> TrainConfig:
    doc = {**DIRECTIONAL, "method": method, "seed": seed}
    doc["task"] = {**DIRECTIONAL["task"], "noise_level": noise_level}
    return TrainConfig.from_dict(doc)


def with_noise(config: TrainConfig, noise_level: float) -> TrainConfig:
    return dataclasses.replace(config, task=dataclasses.replace(config.task, noise_level=noise_level))


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return dataclasses.replace(config, seed=seed)


@dataclass
class SeedSweep:
    """Per-seed trajectories of one method; rows are seeds, columns checkpoints M0..M_{T+1}."""

    method: str
    seeds: tuple[int, ...]
    accuracy: np.ndarray
    consistency: np.ndarray  # measured C per preference iteration
    flips: np.ndarray

    @property
    def mean_accuracy(self) -> np.ndarray:
        return self.accuracy.mean(axis=0)

    @property
    def mean_consistency(self) -> np.ndarray:
        return self.consistency.mean(axis=0)

    @property
    def mean_flip_rate(self) -> float:
        return float(self.flips.mean())


def sweep(config: TrainConfig, seeds=DIRECTIONAL_SEEDS) -> SeedSweep:
    """Run ``config`` once per seed (task and model both re-seeded)."""
    acc, cons, flips = [], [], []
    for s in seeds:
        cfg = with_seed(config, int(s))
        snaps = run_experiment(build_task(cfg), cfg)
        acc.append([x.proxy_accuracy for x in snaps])
        cons.append([x.consistency_rate for x in snaps[2:]])
        flips.append([x.flip_rate for x in snaps[2:]])
    return SeedSweep(config.method, tuple(int(s) for s in seeds), np.array(acc), np.array(cons), np.array(flips))


def calibrate_noise(
    config: TrainConfig,
    target: float = TARGET_FLIP_RATE,
    seeds=DIRECTIONAL_SEEDS,
    lo: float = 0.0,
    hi: float = 2.0,
    tol: float = 1e-3,
) -> float:
    """Bisect the reward-noise level until ``config``'s mean flip rate meets ``target``.

    The flip rate is averaged over seeds and preference iterations and is
    nondecreasing in the noise level up to sampling wiggle, which bisection
    tolerates.
    """
    if not 0.0 < target < 0.5:
        raise DomainError("target flip rate must lie in (0, 0.5)")
    if sweep(with_noise(config, hi), seeds).mean_flip_rate < target:
        raise DomainError(f"noise level {hi} does not reach a flip rate of {target}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if sweep(with_noise(config, mid), seeds).mean_flip_rate < target:
            lo = mid
        else:
            hi = mid
    return hi

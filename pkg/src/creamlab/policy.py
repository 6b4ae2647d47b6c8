"""Tabular softmax policies over a finite response set per prompt."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from .errors import DataError, DomainError


@dataclass(frozen=True)
class TaskSpace:
    num_prompts: int
    responses_per_prompt: int

    def __post_init__(self):
        if self.num_prompts < 1:
            raise DomainError(f"num_prompts must be >= 1, got {self.num_prompts}")
        if self.responses_per_prompt < 2:
            raise DomainError(
                f"responses_per_prompt must be >= 2, got {self.responses_per_prompt}"
            )


@dataclass
class PolicyParams:
    """A logits table of shape (num_prompts, V).

    ``label`` names the checkpoint (``"M0"``, ``"M1"``, ...) and is the key
    under which candidate log-probs are cached in a :class:`CandidateBatch`.
    """

    logits: np.ndarray
    label: str | None = None

    def __post_init__(self):
        logits = np.array(self.logits, dtype=np.float64)
        if logits.ndim != 2:
            raise DomainError(f"logits must be 2-D, got shape {logits.shape}")
        TaskSpace(*logits.shape)
        if not np.all(np.isfinite(logits)):
            raise DomainError("logits must be finite")
        self.logits = logits

    @property
    def num_prompts(self) -> int:
        return self.logits.shape[0]

    @property
    def responses_per_prompt(self) -> int:
        return self.logits.shape[1]

    @property
    def space(self) -> TaskSpace:
        return TaskSpace(self.num_prompts, self.responses_per_prompt)

    def copy(self, label: str | None = None) -> "PolicyParams":
        return PolicyParams(self.logits.copy(), label=self.label if label is None else label)

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits, axis=1)

    def probs(self) -> np.ndarray:
        return softmax(self.logits, axis=1)

    def to_dict(self) -> dict:
        return {
            "num_prompts": self.num_prompts,
            "responses_per_prompt": self.responses_per_prompt,
            "logits": self.logits.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, label: str | None = None) -> "PolicyParams":
        logits = np.array(doc["logits"], dtype=np.float64)
        shape = (int(doc["num_prompts"]), int(doc["responses_per_prompt"]))
        if logits.shape != shape:
            raise DataError(f"logits shape {logits.shape} does not match header {shape}")
        return cls(logits, label=label)

    def to_json(self) -> str:
        # json uses repr() for floats, which round-trips every finite double
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, label: str | None = None) -> "PolicyParams":
        return cls.from_dict(json.loads(text), label=label)


def _check_index(params: PolicyParams, prompt: int, response: int) -> None:
    if not 0 <= prompt < params.num_prompts:
        raise DomainError(f"prompt {prompt} out of range [0, {params.num_prompts})")
    if not 0 <= response < params.responses_per_prompt:
        raise DomainError(
            f"response {response} out of range [0, {params.responses_per_prompt})"
        )


def log_prob(params: PolicyParams, prompt: int, response: int) -> float:
    """log pi(response | prompt)."""
    _check_index(params, prompt, response)
    row = params.logits[prompt]
    return float(row[response] - np.logaddexp.reduce(row))


def grad_log_prob(params: PolicyParams, prompt: int, response: int) -> np.ndarray:
    """d log pi(response | prompt) / d logits[prompt] = onehot - softmax."""
    _check_index(params, prompt, response)
    g = -softmax(params.logits[prompt])
    g[response] += 1.0
    return g


def _inverse_cdf_draw(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    idx = (u[..., :, None] >= cdf[..., None, :]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_candidates(
    params: PolicyParams, prompt: int, n: int, temperature: float, rng_seed
) -> np.ndarray:
    """Draw ``n`` responses i.i.d. from softmax(logits[prompt] / temperature)."""
    if n < 2:
        raise DomainError(f"need at least 2 candidates, got {n}")
    if not temperature > 0:
        raise DomainError(f"temperature must be > 0, got {temperature}")
    _check_index(params, prompt, 0)
    rng = np.random.default_rng(rng_seed)
    probs = softmax(params.logits[prompt] / temperature)
    return _inverse_cdf_draw(probs, rng.random(n))


@dataclass
class CandidateBatch:
    """N sampled responses per prompt plus their log-probs per checkpoint.

    ``responses[j, i]`` is the response index of candidate ``i`` for
    ``prompts[j]``; ``logps[label][j, i]`` is its log-probability under the
    checkpoint called ``label``.
    """

    prompts: np.ndarray
    responses: np.ndarray
    logps: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.prompts = np.asarray(self.prompts, dtype=np.int64)
        self.responses = np.atleast_2d(np.asarray(self.responses, dtype=np.int64))
        if self.responses.shape[0] != self.prompts.shape[0]:
            raise DataError("one candidate row per prompt is required")
        if self.responses.shape[1] < 2:
            raise DomainError("a candidate batch needs N >= 2")

    @property
    def n_candidates(self) -> int:
        return self.responses.shape[1]

    def attach(self, params: PolicyParams) -> "CandidateBatch":
        """Evaluate and cache candidate log-probs under ``params``."""
        if params.label is None:
            raise DataError("checkpoint needs a label to be attached to a batch")
        if self.responses.max(initial=0) >= params.responses_per_prompt or self.responses.min(initial=0) < 0:
            raise DomainError("candidate response index out of range")
        lp = params.log_probs()
        self.logps[params.label] = lp[self.prompts[:, None], self.responses]
        return self

    def logp(self, label: str) -> np.ndarray:
        try:
            return self.logps[label]
        except KeyError:
            raise DataError(f"no log-probs stored for checkpoint {label!r}") from None


def sample_batch(
    params: PolicyParams,
    prompts,
    n: int,
    temperature: float,
    rng_seed,
) -> CandidateBatch:
    """Sample ``n`` candidates for every prompt in ``prompts`` and attach
    their log-probs under ``params``."""
    if n < 2:
        raise DomainError(f"need at least 2 candidates, got {n}")
    if not temperature > 0:
        raise DomainError(f"temperature must be > 0, got {temperature}")
    prompts = np.asarray(prompts, dtype=np.int64)
    rng = np.random.default_rng(rng_seed)
    probs = softmax(params.logits[prompts] / temperature, axis=1)
    responses = _inverse_cdf_draw(probs, rng.random((len(prompts), n)))
    batch = CandidateBatch(prompts, responses)
    if params.label is not None:
        batch.attach(params)
    return batch

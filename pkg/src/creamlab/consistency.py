"""Rank agreement between two rankings of the same candidates."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError
from .policy import PolicyParams
from .rewarding import RankedList


def _ranks(x) -> np.ndarray:
    return x.ranks if isinstance(x, RankedList) else np.atleast_2d(np.asarray(x, dtype=np.int64))


def _pair(j, k):
    a, b = _ranks(j), _ranks(k)
    if a.shape != b.shape:
        raise DomainError(f"ranking shapes differ: {a.shape} vs {b.shape}")
    if a.shape[1] < 2:
        raise DomainError("need at least 2 candidates")
    return a, b


def _unwrap(x, like):
    # scalar out for a single 1-D ranking, array for a batch of rows
    single = not isinstance(like, RankedList) and np.ndim(like) == 1
    return x.item() if single else x


def kendall_tau(j_ranks, k_ranks):
    """Concordant minus discordant pairs over N(N-1)/2; tied pairs count 0."""
    a, b = _pair(j_ranks, k_ranks)
    return _unwrap(_kernels.kendall_rows(a, b), j_ranks)


def spearman_rho(j_ranks, k_ranks):
    """1 - 6 sum d^2 / (N (N^2 - 1)) on integer rank permutations."""
    a, b = _pair(j_ranks, k_ranks)
    return _unwrap(_kernels.spearman_rows(a, b), j_ranks)


def top_order(j_ranks, k_ranks):
    """1 iff both rankings pick the same best and the same worst candidate."""
    a, b = _pair(j_ranks, k_ranks)
    return _unwrap(_kernels.toporder_rows(a, b), j_ranks)


def consistency_rate(taus) -> float:
    """Mean of (tau + 1) / 2 over prompts."""
    t = np.asarray(taus, dtype=np.float64).ravel()
    if t.size == 0:
        raise DomainError("no tau values to aggregate")
    return float(np.clip(np.mean((t + 1.0) / 2.0), 0.0, 1.0))


def estimate_lambda(
    policy_t: PolicyParams,
    policy_prev: PolicyParams,
    reference: PolicyParams,
    prompt: int,
    prev_is_likelihood: bool = False,
) -> float:
    """Exact disagreement functional by enumeration over all V^2 ordered pairs.

    lambda = 2 * sum_{y,y'} pi_t(y) pi_t(y') 1[r_t(y) >= r_t(y')] 1[r_prev(y) < r_prev(y')]

    with r = log pi - log pi_ref. Set ``prev_is_likelihood`` to score the
    previous checkpoint by plain log-likelihood (the first-iteration case).
    Then the expected Kendall tau of N i.i.d. candidates drawn from pi_t is
    1 - 2 * lambda, provided distinct responses never tie in reward.
    """
    lp_t = policy_t.log_probs()[prompt]
    lp_ref = reference.log_probs()[prompt]
    lp_prev = policy_prev.log_probs()[prompt]
    r_cur = lp_t - lp_ref
    r_prev = lp_prev if prev_is_likelihood else lp_prev - lp_ref
    return 2.0 * _kernels.disagreement_mass(np.exp(lp_t), r_cur, r_prev)


@dataclass
class ConsistencyReport:
    prompt_ids: np.ndarray
    tau: np.ndarray
    spearman: np.ndarray
    toporder: np.ndarray

    @classmethod
    def from_rankings(cls, j_ranks, k_ranks, prompt_ids=None) -> "ConsistencyReport":
        a, b = _pair(j_ranks, k_ranks)
        ids = np.arange(a.shape[0]) if prompt_ids is None else np.asarray(prompt_ids)
        return cls(
            ids,
            _kernels.kendall_rows(a, b),
            _kernels.spearman_rows(a, b),
            _kernels.toporder_rows(a, b),
        )

    @property
    def rate(self) -> float:
        return consistency_rate(self.tau)

    def summary(self) -> dict:
        out = {"consistency_rate": self.rate}
        for name in ("tau", "spearman", "toporder"):
            col = np.asarray(getattr(self, name), dtype=np.float64)
            out[f"{name}_mean"] = float(col.mean())
            out[f"{name}_std"] = float(col.std())
        return out

    def rows(self):
        for pid, t, s, o in zip(self.prompt_ids, self.tau, self.spearman, self.toporder):
            yield [int(pid), f"{t:.17g}", f"{s:.17g}", int(o)]
        summ = self.summary()
        yield ["mean", f"{summ['tau_mean']:.17g}", f"{summ['spearman_mean']:.17g}", f"{summ['toporder_mean']:.17g}"]
        yield ["std", f"{summ['tau_std']:.17g}", f"{summ['spearman_std']:.17g}", f"{summ['toporder_std']:.17g}"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "prompt_ids": self.prompt_ids.tolist(),
            "tau": self.tau.tolist(),
            "spearman": self.spearman.tolist(),
            "toporder": self.toporder.tolist(),
            **self.summary(),
        }


CSV_HEADER = ["prompt_id", "tau", "spearman", "toporder"]

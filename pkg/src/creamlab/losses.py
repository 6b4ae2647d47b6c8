"""Preference objectives with analytic gradients.

All pairwise losses take a :class:`LogRatioPair` and return a
:class:`LossValue` whose ``grad`` is the gradient with respect to the four
log-probabilities ``(policy_chosen, policy_rejected, ref_chosen,
ref_rejected)``. Fields may be scalars or equally shaped arrays; values and
gradients are then elementwise. Batch reductions (always a mean) happen in
:func:`preference_objective` and :func:`sft_loss`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit, softmax

from .errors import DomainError
from .policy import PolicyParams

DEFAULT_BETA = 0.1


def softplus(x):
    """log(1 + e^x), overflow-safe. ``-log sigmoid(a) == softplus(-a)``."""
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class LogRatioPair:
    policy_chosen: float | np.ndarray
    policy_rejected: float | np.ndarray
    ref_chosen: float | np.ndarray = 0.0
    ref_rejected: float | np.ndarray = 0.0
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"beta must be > 0, got {self.beta}")

    @property
    def log_ratio_chosen(self):
        return np.subtract(self.policy_chosen, self.ref_chosen)

    @property
    def log_ratio_rejected(self):
        return np.subtract(self.policy_rejected, self.ref_rejected)

    @property
    def delta(self):
        return self.log_ratio_chosen - self.log_ratio_rejected

    def swapped(self) -> "LogRatioPair":
        return LogRatioPair(
            self.policy_rejected, self.policy_chosen,
            self.ref_rejected, self.ref_chosen, self.beta,
        )

    @classmethod
    def from_delta(cls, delta, beta: float = DEFAULT_BETA) -> "LogRatioPair":
        """A probe pair whose whole reward gap sits on the chosen policy term."""
        return cls(np.asarray(delta, dtype=np.float64), 0.0, 0.0, 0.0, beta)

    @classmethod
    def from_policies(
        cls,
        policy: PolicyParams,
        reference: PolicyParams,
        prompts,
        chosen,
        rejected,
        beta: float = DEFAULT_BETA,
    ) -> "LogRatioPair":
        lp = policy.log_probs()
        lr = reference.log_probs()
        return cls(
            lp[prompts, chosen], lp[prompts, rejected],
            lr[prompts, chosen], lr[prompts, rejected], beta,
        )


class LossValue(NamedTuple):
    value: float | np.ndarray
    grad: np.ndarray  # shape (4, ...): d/d(policy_chosen, policy_rejected, ref_chosen, ref_rejected)

    @property
    def d_delta(self):
        """dL/d(delta); meaningful for losses that depend on the pair only via delta."""
        return self.grad[0]


def _from_delta_grad(value, g):
    g = np.asarray(g, dtype=np.float64)
    return LossValue(value, np.stack([g, -g, -g, g]))


def _check_label(z):
    if np.any((np.asarray(z) != 0) & (np.asarray(z) != 1)):
        raise DomainError(f"preference label must be 0 or 1, got {z}")


def dpo_loss(pair: LogRatioPair, z=1) -> LossValue:
    """-log sigma(beta*delta) for z=1, -log sigma(-beta*delta) for z=0."""
    _check_label(z)
    z = np.asarray(z, dtype=np.float64)
    a = pair.beta * pair.delta
    value = z * softplus(-a) + (1.0 - z) * softplus(a)
    return _from_delta_grad(value, pair.beta * (expit(a) - z))


def reg_loss(pair: LogRatioPair) -> LossValue:
    """Consistency regulariser: both orderings' DPO losses summed."""
    a = pair.beta * pair.delta
    value = softplus(-a) + softplus(a)
    return _from_delta_grad(value, pair.beta * (2.0 * expit(a) - 1.0))


def cream_loss(pair: LogRatioPair, z=1, c=1.0) -> LossValue:
    """Soft-labelled DPO: c * dpo(z) + (1 - c) * dpo(1 - z)."""
    c_arr = np.asarray(c, dtype=np.float64)
    if np.any((c_arr < 0) | (c_arr > 1)) or np.any(np.isnan(c_arr)):
        raise DomainError(f"soft label must lie in [0, 1], got {c}")
    _check_label(z)
    z = np.asarray(z, dtype=np.float64)
    a = pair.beta * pair.delta
    forward = z * softplus(-a) + (1.0 - z) * softplus(a)
    reverse = (1.0 - z) * softplus(-a) + z * softplus(a)
    # the mixture is cross-entropy against the smoothed label, so its gradient
    # is beta * (sigma - z_hat); z_hat == c exactly when z == 1
    z_hat = c_arr * z + (1.0 - c_arr) * (1.0 - z)
    return _from_delta_grad(c_arr * forward + (1.0 - c_arr) * reverse, pair.beta * (expit(a) - z_hat))


def regularized_loss(pair: LogRatioPair, z=1, lam=0.0) -> LossValue:
    """dpo(z) + lam * reg."""
    if np.any(np.asarray(lam) < 0):
        raise DomainError(f"lambda must be >= 0, got {lam}")
    d = dpo_loss(pair, z)
    r = reg_loss(pair)
    return LossValue(d.value + lam * r.value, d.grad + lam * r.grad)


def c_lambda(lam: float) -> float:
    """Soft weight on the forward-ordered term equivalent to regulariser weight lam."""
    return (1.0 + lam) / (1.0 + 2.0 * lam)


def kl_penalty_loss(pair: LogRatioPair, lam=0.0, z=1) -> LossValue:
    """dpo(z) + lam * (pi/pi_ref(chosen) - pi/pi_ref(rejected))**2.

    The ratios are taken in probability space, exp of the stored log-ratios.
    """
    d = dpo_loss(pair, z)
    rc = np.exp(pair.log_ratio_chosen)
    rr = np.exp(pair.log_ratio_rejected)
    gap = rc - rr
    gc = 2.0 * lam * gap * rc
    gr = -2.0 * lam * gap * rr
    grad = d.grad + np.stack([gc, gr, -gc, -gr])
    return LossValue(d.value + lam * gap * gap, grad)


# ---------------------------------------------------------------------------
# parameter-level objectives
# ---------------------------------------------------------------------------

Objective = Callable[[PolicyParams], tuple[float, np.ndarray]]


def preference_objective(
    policy: PolicyParams,
    reference: PolicyParams,
    prompts,
    chosen,
    rejected,
    loss: Callable[..., LossValue] = dpo_loss,
    beta: float = DEFAULT_BETA,
    **loss_kwargs,
) -> tuple[float, np.ndarray]:
    """Mean pairwise loss over records and its gradient w.r.t. policy logits.

    Array-valued ``loss_kwargs`` (``c``, ``z``) are per record.
    """
    prompts = np.asarray(prompts, dtype=np.int64)
    chosen = np.asarray(chosen, dtype=np.int64)
    rejected = np.asarray(rejected, dtype=np.int64)
    if prompts.size == 0:
        raise DomainError("no preference records")
    pair = LogRatioPair.from_policies(policy, reference, prompts, chosen, rejected, beta)
    out = loss(pair, **loss_kwargs)
    m = prompts.size
    g_c = out.grad[0] / m
    g_r = out.grad[1] / m
    grad = np.zeros_like(policy.logits)
    # d log pi(y) / d row = e_y - softmax(row); one shared path for every loss
    np.add.at(grad, (prompts, chosen), g_c)
    np.add.at(grad, (prompts, rejected), g_r)
    p = softmax(policy.logits[prompts], axis=1)
    np.add.at(grad, prompts, -(g_c + g_r)[:, None] * p)
    return float(np.mean(out.value)), grad


def sft_loss(params: PolicyParams, sft_data) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of (prompt, target) pairs and its logits gradient."""
    data = np.asarray(sft_data, dtype=np.int64).reshape(-1, 2)
    if data.shape[0] == 0:
        raise DomainError("SFT data is empty")
    prompts, targets = data[:, 0], data[:, 1]
    lp = params.log_probs()
    m = data.shape[0]
    value = -float(np.mean(lp[prompts, targets]))
    grad = np.zeros_like(params.logits)
    np.add.at(grad, prompts, softmax(params.logits[prompts], axis=1) / m)
    np.add.at(grad, (prompts, targets), -1.0 / m)
    return value, grad


def finite_difference_check(
    objective: Objective,
    params: PolicyParams,
    step: float = 1e-5,
    rows=None,
    floor: float = 1e-4,
) -> float:
    """Max relative error between central differences and the analytic gradient.

    Every logit in ``rows`` (default: all rows) is perturbed. Components
    smaller than ``floor * max(1, |f|)`` are compared absolutely: below that
    scale a central difference only resolves roundoff of ``f`` itself.
    """
    if not 0 < step <= 1e-2:
        raise DomainError(f"step must lie in (0, 1e-2], got {step}")
    f0, analytic = objective(params)
    floor = floor * max(1.0, abs(f0))
    rows = range(params.num_prompts) if rows is None else rows
    worst = 0.0
    for r in rows:
        for v in range(params.responses_per_prompt):
            plus = params.copy()
            plus.logits[r, v] += step
            minus = params.copy()
            minus.logits[r, v] -= step
            fd = (objective(plus)[0] - objective(minus)[0]) / (2.0 * step)
            an = analytic[r, v]
            err = abs(fd - an) / max(abs(fd), abs(an), floor)
            worst = max(worst, err)
    return worst

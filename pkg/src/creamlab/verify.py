"""Executable property suites: each check compares an operation against an
independent oracle and reports its worst observed error.

Suites: ``losses``, ``lemmas``, ``theorems``, ``rank-stats`` (or ``all``).
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logit

from . import _kernels
from .consistency import consistency_rate, estimate_lambda, kendall_tau, spearman_rho, top_order
from .losses import (
    LogRatioPair, c_lambda, cream_loss, dpo_loss, finite_difference_check, kl_penalty_loss,
    preference_objective, reg_loss, regularized_loss, sft_loss,
)
from .policy import PolicyParams
from .tasks import generate_task
from .trainer import TaskConfig, TrainConfig, two_step_harness

SUITES = ("losses", "lemmas", "theorems", "rank-stats")
LAMBDAS = (0.0, 0.25, 1.0, 4.0)


@dataclass
class CheckResult:
    name: str
    suite: str
    max_error: float
    tolerance: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag}  {self.suite:<10} {self.name:<28} max_err={self.max_error:.3e} "
                f"tol={self.tolerance:.1e}  ({self.seconds:.2f}s){'  ' + self.detail if self.detail else ''}")


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
    err = np.where(a == b, 0.0, np.abs(a - b) / scale)
    return float(np.max(err)) if err.size else 0.0


def _random_pairs(rng, n):
    return LogRatioPair(
        rng.normal(-2.0, 1.5, n), rng.normal(-2.0, 1.5, n),
        rng.normal(-2.0, 1.5, n), rng.normal(-2.0, 1.5, n),
        beta=float(rng.choice([0.05, 0.1, 0.5, 1.0, 2.0])),
    )


def _random_problem(rng, prompts=3, v=4, records=6):
    policy = PolicyParams(rng.normal(0, 1.5, (prompts, v)), label="theta")
    reference = PolicyParams(rng.normal(0, 1.5, (prompts, v)), label="ref")
    p = rng.integers(0, prompts, records)
    a = rng.integers(0, v, records)
    b = (a + rng.integers(1, v, records)) % v
    return policy, reference, p, a, b


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def check_gradient_sweep(seed: int = 0, instances: int = 50) -> CheckResult:
    """Central differences (step 1e-5) against every analytic logits gradient."""
    rng = np.random.default_rng([seed, 11])
    worst = 0.0
    for _ in range(instances):
        policy, reference, p, a, b = _random_problem(rng)
        beta = float(rng.choice([0.1, 0.5, 1.0]))
        c = rng.random(len(p))
        z = rng.integers(0, 2, len(p))
        lam = float(rng.choice(LAMBDAS))
        objectives = [
            lambda th: preference_objective(th, reference, p, a, b, loss=dpo_loss, beta=beta, z=z),
            lambda th: preference_objective(th, reference, p, a, b, loss=reg_loss, beta=beta),
            lambda th: preference_objective(th, reference, p, a, b, loss=cream_loss, beta=beta, z=z, c=c),
            lambda th: preference_objective(th, reference, p, a, b, loss=regularized_loss, beta=beta, z=z, lam=lam),
            lambda th: preference_objective(th, reference, p, a, b, loss=kl_penalty_loss, beta=beta, lam=lam),
            lambda th: sft_loss(th, np.stack([p, a], axis=1)),
        ]
        for obj in objectives:
            worst = max(worst, finite_difference_check(obj, policy, step=1e-5))
    return CheckResult("gradient-sweep", "losses", worst, 1e-6, worst < 1e-6,
                       detail=f"{instances} instances x 6 objectives")


def check_stationarity() -> CheckResult:
    """dL/d(delta) is exactly 0 where sigma(beta*delta) == c and has the sign of sigma - c elsewhere."""
    worst = 0.0
    ok = True
    for c, beta in itertools.product((0.3, 0.5, 0.7), (0.1, 1.0)):
        root = logit(c) / beta
        hits = [d for d in root + np.arange(-64, 65) * np.spacing(max(abs(root), 1e-300))
                if expit(beta * d) == c]
        if not hits:
            ok = False
        for d in hits:
            g = cream_loss(LogRatioPair.from_delta(d, beta), 1, c).d_delta
            worst = max(worst, abs(float(g)))
        probe = np.linspace(-60.0, 60.0, 2001)
        g = cream_loss(LogRatioPair.from_delta(probe, beta), 1, c).d_delta
        s = expit(beta * probe) - c
        ok &= bool(np.all(np.sign(g) == np.sign(s)))
    ok &= worst == 0.0
    return CheckResult("stationarity", "losses", worst, 0.0, ok, detail="c in {0.3, 0.5, 0.7}")


def check_cross_entropy_view(seed: int = 0, instances: int = 200) -> CheckResult:
    """Soft-labelled loss equals binary cross-entropy with a smoothed label."""
    rng = np.random.default_rng([seed, 13])
    pair = _random_pairs(rng, instances)
    c = rng.random(instances)
    a = pair.beta * pair.delta
    bce = -(c * log_expit(a) + (1.0 - c) * log_expit(-a))
    err = _rel(cream_loss(pair, 1, c).value, bce)
    return CheckResult("cross-entropy-view", "losses", err, 1e-12, err < 1e-12)


def check_two_dataset_form(seed: int = 0, instances: int = 50) -> CheckResult:
    """c * DPO on (w, l) plus (1 - c) * DPO on (l, w) equals the single soft-label loss."""
    rng = np.random.default_rng([seed, 17])
    worst = 0.0
    for _ in range(instances):
        policy, reference, p, w, l = _random_problem(rng)
        c = float(rng.random())
        beta = float(rng.choice([0.1, 1.0]))
        v1, g1 = preference_objective(policy, reference, p, w, l, loss=cream_loss, beta=beta, c=c)
        vf, gf = preference_objective(policy, reference, p, w, l, loss=dpo_loss, beta=beta)
        vr, gr = preference_objective(policy, reference, p, l, w, loss=dpo_loss, beta=beta)
        worst = max(worst, _rel(v1, c * vf + (1 - c) * vr), float(np.max(np.abs(g1 - (c * gf + (1 - c) * gr)))))
    return CheckResult("two-dataset-form", "losses", worst, 1e-12, worst < 1e-12)


# ---------------------------------------------------------------------------
# lemmas
# ---------------------------------------------------------------------------

def _log_sigmoid(x):
    # branch on the real part so the exponential never overflows; complex-safe
    pos = x.real >= 0
    return np.where(pos, -np.log1p(np.exp(-np.where(pos, x, 0))), x - np.log1p(np.exp(np.where(pos, 0, x))))


def _kl_side(theta, ref_logp, p, a, b, beta):
    """2 KL(uniform || (P, 1-P)) + 2 ln 2 evaluated in complex-safe arithmetic."""
    lse = np.log(np.sum(np.exp(theta), axis=1))
    lp = theta - lse[:, None]
    delta = (lp[p, a] - ref_logp[p, a]) - (lp[p, b] - ref_logp[p, b])
    x = beta * delta
    kl = 0.5 * (np.log(0.5) - _log_sigmoid(x)) + 0.5 * (np.log(0.5) - _log_sigmoid(-x))
    return np.mean(2.0 * kl + 2.0 * np.log(2.0))


def _kl_value(lp, ref_logp, p, a, b, beta):
    # real-valued twin of _kl_side with log P taken accurately
    delta = (lp[p, a] - ref_logp[p, a]) - (lp[p, b] - ref_logp[p, b])
    log_p, log_q = log_expit(beta * delta), log_expit(-beta * delta)
    kl = 0.5 * (np.log(0.5) - log_p) + 0.5 * (np.log(0.5) - log_q)
    return np.mean(2.0 * kl + 2.0 * np.log(2.0))


def check_kl_form(seed: int = 0, instances: int = 100) -> CheckResult:
    """Regulariser == 2 KL(u || P) + 2 ln 2; gradients compared by complex step."""
    rng = np.random.default_rng([seed, 19])
    val_err = grad_err = 0.0
    h = 1e-30
    for _ in range(instances):
        policy, reference, p, a, b = _random_problem(rng)
        beta = float(rng.choice([0.1, 0.5, 1.0, 2.0]))
        ref_logp = reference.log_probs()
        value, grad = preference_objective(policy, reference, p, a, b, loss=reg_loss, beta=beta)
        val_err = max(val_err, _rel(value, _kl_value(policy.log_probs(), ref_logp, p, a, b, beta)))
        cs = np.empty_like(grad)
        for idx in np.ndindex(*policy.logits.shape):
            theta = policy.logits.astype(np.complex128)
            theta[idx] += 1j * h
            cs[idx] = _kl_side(theta, ref_logp, p, a, b, beta).imag / h
        grad_err = max(grad_err, float(np.max(np.abs(cs - grad) / np.maximum(np.abs(cs), 1e-3))))
    ok = val_err < 1e-12 and grad_err < 1e-10
    return CheckResult("regulariser-kl-form", "lemmas", max(val_err, grad_err), 1e-10, ok,
                       detail=f"value err {val_err:.1e} (tol 1e-12), grad err {grad_err:.1e}")


def tau_monte_carlo(policy_t, policy_prev, reference, prompt, batches, n, rng):
    """Sample ``batches`` i.i.d. N-candidate sets from pi_t; return (mean tau, standard error)."""
    probs = policy_t.probs()[prompt]
    r_cur = policy_t.log_probs()[prompt] - reference.log_probs()[prompt]
    r_prev = policy_prev.log_probs()[prompt] - reference.log_probs()[prompt]
    draws = np.minimum((rng.random((batches, n))[..., None] >= np.cumsum(probs)).sum(-1), len(probs) - 1)
    taus = _kernels.kendall_rows(_kernels.rank_rows(r_cur[draws]), _kernels.rank_rows(r_prev[draws]))
    return float(taus.mean()), float(taus.std(ddof=1) / np.sqrt(batches))


def check_tau_expectation(seed: int = 0, configs: int = 6, batches: int = 4000, n: int = 5) -> CheckResult:
    """Monte-Carlo mean Kendall tau within 3 standard errors of 1 - 2 lambda."""
    rng = np.random.default_rng([seed, 23])
    worst = 0.0
    notes = []
    for k in range(configs):
        v = (4, 8)[k % 2]
        theta_t, theta_prev, ref = (PolicyParams(rng.normal(0, 1.0, (1, v)), label=s) for s in ("t", "prev", "ref"))
        lam = estimate_lambda(theta_t, theta_prev, ref, 0)
        mean, se = tau_monte_carlo(theta_t, theta_prev, ref, 0, batches, n, rng)
        gap = abs(mean - (1.0 - 2.0 * lam))
        if se == 0.0:  # every batch gave the same tau; only an exact match passes
            z = bridge = 0.0 if gap < 1e-12 else np.inf
        else:
            z = gap / se
            bridge = abs((1.0 + mean) / 2.0 - (1.0 - lam)) / (se / 2.0)
        worst = max(worst, z, bridge)
        notes.append(f"V={v}:{z:.2f}se")
    return CheckResult("tau-expectation", "lemmas", worst, 3.0, worst <= 3.0,
                       detail="deviation in standard errors; " + " ".join(notes))


# ---------------------------------------------------------------------------
# theorems
# ---------------------------------------------------------------------------

def check_soft_label_equivalence(seed: int = 0, instances: int = 100, corrupt_c_lambda: bool = False) -> CheckResult:
    """DPO + lam * Reg == (1 + 2 lam) * soft-label loss at C_lambda, values and gradients.

    ``corrupt_c_lambda`` shifts the soft weight by -0.1 as a negative control.
    """
    rng = np.random.default_rng([seed, 29])
    worst = 0.0
    for lam in LAMBDAS:
        pair = _random_pairs(rng, instances)
        z = rng.integers(0, 2, instances)
        c = c_lambda(lam) - (0.1 if corrupt_c_lambda else 0.0)
        lhs = regularized_loss(pair, z, lam)
        rhs = cream_loss(pair, z, c)
        worst = max(worst, _rel(lhs.value, (1 + 2 * lam) * rhs.value), _rel(lhs.grad, (1 + 2 * lam) * rhs.grad))
    detail = "C_lambda corrupted" if corrupt_c_lambda else f"lambda in {LAMBDAS}"
    return CheckResult("soft-label-equivalence", "theorems", worst, 1e-10, worst < 1e-10, detail=detail)


def harness_config(seed: int) -> tuple:
    config = TrainConfig(method="SRLM", seed=seed, optimizer="sgd", sft_epochs=1, learning_rate=0.5,
                         init_knowledge=1.0, task=TaskConfig(num_prompts=20, responses_per_prompt=6))
    task = generate_task(20, 6, seed, sft_fraction=0.5)
    return task, config


def check_two_step_descent(seed: int = 0, tasks: int = 3, outer: int = 20, inner: int = 5) -> CheckResult:
    """Two-step harness: nonincreasing trace and a relabel step that never raises the loss."""
    worst = 0.0
    relabel_ok = True
    for k in range(tasks):
        task, config = harness_config(seed * 1000 + k)
        trace = two_step_harness(task, config, inner_steps=inner, outer_steps=outer)
        rises = np.diff(trace.losses)
        worst = max(worst, float(rises.max(initial=0.0)))
        relabel_ok &= all(r <= l for r, l in zip(trace.relabeled, trace.losses))
    ok = worst <= 1e-6 and relabel_ok
    return CheckResult("two-step-descent", "theorems", worst, 1e-6, ok,
                       detail=f"largest step increase; relabel inequality {'exact' if relabel_ok else 'VIOLATED'}")


# ---------------------------------------------------------------------------
# rank statistics
# ---------------------------------------------------------------------------

def brute_kendall(j, k) -> float:
    j, k = [int(x) for x in j], [int(x) for x in k]
    n = len(j)
    s = 0
    for a, b in itertools.combinations(range(n), 2):
        dj, dk = j[a] - j[b], k[a] - k[b]
        s += (dj * dk > 0) - (dj * dk < 0)
    return 2 * s / (n * (n - 1))


def brute_spearman(j, k) -> float:
    j, k = [int(x) for x in j], [int(x) for x in k]
    n = len(j)
    return 1 - 6 * sum((x - y) ** 2 for x, y in zip(j, k)) / (n * (n * n - 1))


def brute_toporder(j, k) -> int:
    j, k = [int(x) for x in j], [int(x) for x in k]
    return int(j.index(min(j)) == k.index(min(k)) and j.index(max(j)) == k.index(max(k)))


def check_rank_oracles(seed: int = 0, pairs: int = 1000) -> CheckResult:
    """Kendall, Spearman and TopOrder against O(N^2) loops, exact equality."""
    rng = np.random.default_rng([seed, 31])
    mismatches = 0
    worst = 0.0
    for _ in range(pairs):
        n = int(rng.integers(2, 11))
        j = rng.permutation(n) + 1
        k = rng.permutation(n) + 1
        got = (kendall_tau(j, k), spearman_rho(j, k), top_order(j, k))
        want = (brute_kendall(j, k), brute_spearman(j, k), brute_toporder(j, k))
        for g, w in zip(got, want):
            worst = max(worst, abs(g - w))
            mismatches += g != w
    return CheckResult("rank-brute-force", "rank-stats", worst, 0.0, mismatches == 0,
                       detail=f"{pairs} permutation pairs, {mismatches} mismatches")


def check_rank_examples() -> CheckResult:
    cases = [
        (kendall_tau([1, 2, 3, 4, 5], [2, 1, 3, 4, 5]), 0.8),
        (spearman_rho([1, 2, 3], [2, 1, 3]), 0.5),
        (top_order([1, 3, 2], [1, 2, 3]), 0),
        (top_order([1, 3, 2, 4], [1, 2, 3, 4]), 1),
        (kendall_tau([1, 2, 3], [3, 2, 1]), -1.0),
        (spearman_rho([1, 2, 3], [3, 2, 1]), -1.0),
        (consistency_rate([1.0, 0.0, -1.0]), 0.5),
    ]
    worst = max(abs(g - w) for g, w in cases)
    return CheckResult("rank-hand-examples", "rank-stats", worst, 0.0, worst == 0.0, detail=f"{len(cases)} cases")


def check_kernel_backends(seed: int = 0) -> CheckResult:
    """numba and numpy kernels agree exactly (skipped when numba is absent)."""
    if not _kernels.HAVE_NUMBA:
        return CheckResult("kernel-backends", "rank-stats", 0.0, 0.0, True, detail="numba not installed")
    rng = np.random.default_rng([seed, 37])
    scores = np.round(rng.normal(size=(300, 6)), 1)  # coarse values force ties
    r_np, r_nb = _kernels.rank_rows_numpy(scores), _kernels.rank_rows_numba(scores)
    other = _kernels.rank_rows_numpy(rng.normal(size=(300, 6)))
    diffs = [
        np.max(np.abs(r_np - r_nb)),
        np.max(np.abs(_kernels.kendall_rows_numpy(r_np, other) - _kernels.kendall_rows_numba(r_np, other))),
        np.max(np.abs(_kernels.spearman_rows_numpy(r_np, other) - _kernels.spearman_rows_numba(r_np, other))),
        np.max(np.abs(_kernels.toporder_rows_numpy(r_np, other) - _kernels.toporder_rows_numba(r_np, other))),
    ]
    probs = rng.dirichlet(np.ones(7))
    a, b = rng.normal(size=7), rng.normal(size=7)
    diffs.append(abs(_kernels.disagreement_mass_numpy(probs, a, b) - _kernels.disagreement_mass_numba(probs, a, b)))
    worst = float(max(diffs))
    return CheckResult("kernel-backends", "rank-stats", worst, 1e-15, worst <= 1e-15)


# ---------------------------------------------------------------------------

def run_suite(suite: str = "all", seed: int = 0, corrupt_c_lambda: bool = False) -> list[CheckResult]:
    """Run one suite (or ``"all"``) and return its results in order."""
    plan = {
        "losses": [lambda: check_gradient_sweep(seed), check_stationarity,
                   lambda: check_cross_entropy_view(seed), lambda: check_two_dataset_form(seed)],
        "lemmas": [lambda: check_kl_form(seed), lambda: check_tau_expectation(seed)],
        "theorems": [lambda: check_soft_label_equivalence(seed, corrupt_c_lambda=corrupt_c_lambda), lambda: check_two_step_descent(seed)],
        "rank-stats": [lambda: check_rank_oracles(seed), check_rank_examples, lambda: check_kernel_backends(seed)],
    }
    if suite != "all" and suite not in plan:
        raise ValueError(f"unknown suite {suite!r}; expected one of {', '.join(SUITES)} or 'all'")
    names = SUITES if suite == "all" else (suite,)
    results = []
    for name in names:
        for check in plan[name]:
            start = time.perf_counter()
            res = check()
            res.seconds = time.perf_counter() - start
            results.append(res)
    return results

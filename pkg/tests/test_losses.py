import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from creamlab.errors import DomainError
from creamlab.losses import (
    LogRatioPair, c_lambda, cream_loss, dpo_loss, finite_difference_check, kl_penalty_loss,
    preference_objective, reg_loss, regularized_loss, sft_loss,
)
from creamlab.policy import PolicyParams

# mpmath at 30 digits, frozen
NEG_LOG_SIGMOID_1 = 0.313261687518222834
THREE_LN2 = 2.079441541679835928
TWO_LN2 = 1.386294361119890619

deltas = st.floats(-200, 200, allow_nan=False)
betas = st.sampled_from([0.05, 0.1, 0.5, 1.0, 3.0])
weights = st.floats(0, 1)


def probe(delta, beta=0.1):
    return LogRatioPair.from_delta(delta, beta)


def test_dpo_examples():
    assert dpo_loss(probe(0.0), 1).value == pytest.approx(np.log(2), abs=1e-15)
    assert dpo_loss(probe(10.0), 1).value == pytest.approx(NEG_LOG_SIGMOID_1, abs=1e-15)


@given(deltas, betas)
def test_dpo_label_swap_is_pair_swap(delta, beta):
    pair = LogRatioPair(delta, 0.3, -0.2, 0.1, beta)
    a, b = dpo_loss(pair, 0), dpo_loss(pair.swapped(), 1)
    assert a.value == b.value


def test_dpo_rejects_soft_label():
    with pytest.raises(DomainError):
        dpo_loss(probe(1.0), 0.5)


def test_dpo_is_stable_at_extremes():
    big = dpo_loss(probe(1e6, 1.0), 0)
    assert np.isfinite(big.value) and big.value == pytest.approx(1e6)
    assert dpo_loss(probe(1e6, 1.0), 1).value == 0.0


def test_reg_examples():
    assert reg_loss(probe(0.0)).value == pytest.approx(TWO_LN2, abs=1e-15)


@given(deltas, betas)
def test_reg_symmetric_and_sum_of_both_orderings(delta, beta):
    p = probe(delta, beta)
    assert reg_loss(p).value == reg_loss(probe(-delta, beta)).value
    assert reg_loss(p).value == pytest.approx(dpo_loss(p, 1).value + dpo_loss(p, 0).value, rel=1e-15)
    assert reg_loss(p).value >= TWO_LN2 - 1e-15


@given(deltas, betas, st.integers(0, 1))
def test_cream_at_c1_is_dpo(delta, beta, z):
    p = probe(delta, beta)
    a, b = cream_loss(p, z, 1.0), dpo_loss(p, z)
    assert a.value == b.value
    assert np.array_equal(a.grad, b.grad)


@given(deltas, betas, weights)
def test_cream_is_the_stated_mixture(delta, beta, c):
    p = probe(delta, beta)
    mix = c * dpo_loss(p, 1).value + (1 - c) * dpo_loss(p, 0).value
    assert cream_loss(p, 1, c).value == pytest.approx(mix, rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("c", [-0.01, 1.01, np.nan])
def test_cream_domain(c):
    with pytest.raises(DomainError):
        cream_loss(probe(1.0), 1, c)


def test_cream_half_gradient():
    delta = np.linspace(-40, 40, 81)
    g = cream_loss(probe(delta, 0.1), 1, 0.5).d_delta
    np.testing.assert_allclose(g, 0.1 * (1 / (1 + np.exp(-0.1 * delta)) - 0.5), atol=1e-16)
    assert np.all((g == 0) == (delta == 0))


@pytest.mark.parametrize("c", [0.3, 0.5, 0.7])
def test_stationary_point(c):
    from scipy.special import expit, logit
    beta = 0.1
    root = logit(c) / beta
    hits = [d for d in root + np.arange(-64, 65) * np.spacing(abs(root) or 1e-300) if expit(beta * d) == c]
    assert hits
    for d in hits:
        assert cream_loss(probe(d, beta), 1, c).d_delta == 0.0
    off = np.array([root - 5.0, root + 5.0])
    assert np.all(np.sign(cream_loss(probe(off, beta), 1, c).d_delta) == [-1, 1])


@given(deltas, betas, weights)
def test_cross_entropy_view(delta, beta, c):
    from scipy.special import log_expit
    a = beta * delta
    bce = -(c * log_expit(a) + (1 - c) * log_expit(-a))
    assert cream_loss(probe(delta, beta), 1, c).value == pytest.approx(bce, rel=1e-12, abs=1e-300)


def test_regularized_examples():
    assert regularized_loss(probe(0.0), 1, 1.0).value == pytest.approx(THREE_LN2, abs=1e-15)
    p = probe(3.0)
    assert regularized_loss(p, 1, 0.0).value == dpo_loss(p, 1).value
    with pytest.raises(DomainError):
        regularized_loss(p, 1, -0.5)


@given(deltas, betas, st.sampled_from([0.0, 0.25, 1.0, 4.0]), st.integers(0, 1))
def test_soft_label_identity(delta, beta, lam, z):
    pair = LogRatioPair(delta, -0.4, 0.2, -0.1, beta)
    lhs = regularized_loss(pair, z, lam)
    rhs = cream_loss(pair, z, c_lambda(lam))
    np.testing.assert_allclose(lhs.value, (1 + 2 * lam) * rhs.value, rtol=1e-10, atol=1e-300)
    np.testing.assert_allclose(lhs.grad, (1 + 2 * lam) * rhs.grad, rtol=1e-10, atol=1e-300)


def test_c_lambda_values():
    assert c_lambda(0.0) == 1.0
    assert c_lambda(1.0) == pytest.approx(2 / 3)
    assert c_lambda(1e12) == pytest.approx(0.5)


def test_kl_penalty_examples():
    p = LogRatioPair(np.log(2.0), 0.0, 0.0, 0.0, 0.1)
    assert kl_penalty_loss(p, 0.5).value - dpo_loss(p, 1).value == pytest.approx(0.5, abs=1e-15)
    q = LogRatioPair(-1.0, -2.0, -1.5, -2.5, 0.1)  # equal ratios
    assert kl_penalty_loss(q, 0.7).value == pytest.approx(dpo_loss(q, 1).value, abs=1e-15)
    assert kl_penalty_loss(p, 0.0).value == dpo_loss(p, 1).value


def test_sft_examples():
    uniform = PolicyParams(np.zeros((3, 4)))
    data = np.array([[0, 1], [2, 3]])
    assert sft_loss(uniform, data)[0] == pytest.approx(np.log(4), abs=1e-15)
    peaked = PolicyParams(np.where(np.arange(4) == 1, 100.0, 0.0)[None].repeat(3, 0))
    assert sft_loss(peaked, [[0, 1], [1, 1]])[0] < 1e-40
    with pytest.raises(DomainError):
        sft_loss(uniform, np.empty((0, 2)))


def _problem(rng, prompts=3, v=5, m=8):
    policy = PolicyParams(rng.normal(0, 1.5, (prompts, v)))
    ref = PolicyParams(rng.normal(0, 1.5, (prompts, v)))
    p = rng.integers(0, prompts, m)
    a = rng.integers(0, v, m)
    b = (a + rng.integers(1, v, m)) % v
    return policy, ref, p, a, b


LOSS_CASES = [
    ("dpo", dpo_loss, {"z": 1}),
    ("dpo-reverse", dpo_loss, {"z": 0}),
    ("reg", reg_loss, {}),
    ("cream-0.3", cream_loss, {"c": 0.3}),
    ("cream-0.8-z0", cream_loss, {"c": 0.8, "z": 0}),
    ("regularized", regularized_loss, {"lam": 0.25}),
    ("kl-penalty", kl_penalty_loss, {"lam": 0.5}),
]


@pytest.mark.parametrize("name, loss, kw", LOSS_CASES, ids=[c[0] for c in LOSS_CASES])
def test_parameter_gradients_by_finite_differences(name, loss, kw, rng):
    for _ in range(10):
        policy, ref, p, a, b = _problem(rng)
        beta = float(rng.choice([0.1, 1.0]))
        obj = lambda th: preference_objective(th, ref, p, a, b, loss=loss, beta=beta, **kw)
        assert finite_difference_check(obj, policy, step=1e-5) < 1e-6


def test_sft_gradient_by_finite_differences(rng):
    for _ in range(10):
        policy, _, p, a, _ = _problem(rng)
        data = np.stack([p, a], axis=1)
        assert finite_difference_check(lambda th: sft_loss(th, data), policy) < 1e-6


def test_finite_difference_check_flags_wrong_gradient(rng):
    policy, ref, p, a, b = _problem(rng)

    def broken(th):
        v, g = preference_objective(th, ref, p, a, b, loss=dpo_loss)
        return v, 1.5 * g

    assert finite_difference_check(broken, policy) > 0.1
    with pytest.raises(DomainError):
        finite_difference_check(broken, policy, step=0.5)


def test_pair_gradient_matches_four_logprob_differences(rng):
    pair = LogRatioPair(*rng.normal(size=4), beta=0.7)
    for loss, kw in [(dpo_loss, {}), (reg_loss, {}), (cream_loss, {"c": 0.2}), (kl_penalty_loss, {"lam": 0.3})]:
        g = loss(pair, **kw).grad
        base = np.array([pair.policy_chosen, pair.policy_rejected, pair.ref_chosen, pair.ref_rejected])
        for k in range(4):
            hi, lo = base.copy(), base.copy()
            hi[k] += 1e-6
            lo[k] -= 1e-6
            fd = (loss(LogRatioPair(*hi, beta=0.7), **kw).value - loss(LogRatioPair(*lo, beta=0.7), **kw).value) / 2e-6
            assert fd == pytest.approx(g[k], rel=1e-6, abs=1e-9)


@given(st.floats(-20, 20), st.integers(0, 2))
def test_losses_invariant_to_joint_row_shift(shift, row):
    rng = np.random.default_rng(5)
    policy, ref, p, a, b = _problem(rng)
    shifted_p, shifted_r = policy.copy(), ref.copy()
    shifted_p.logits[row] += shift
    shifted_r.logits[row] += shift
    for loss, kw in [(dpo_loss, {}), (cream_loss, {"c": 0.6}), (reg_loss, {})]:
        v0, g0 = preference_objective(policy, ref, p, a, b, loss=loss, **kw)
        v1, g1 = preference_objective(shifted_p, shifted_r, p, a, b, loss=loss, **kw)
        assert v1 == pytest.approx(v0, rel=1e-9)
        np.testing.assert_allclose(g1, g0, atol=1e-9)


def test_batch_reduction_is_a_mean(rng):
    policy, ref, p, a, b = _problem(rng)
    v, _ = preference_objective(policy, ref, p, a, b)
    v2, _ = preference_objective(policy, ref, np.tile(p, 3), np.tile(a, 3), np.tile(b, 3))
    assert v2 == pytest.approx(v, rel=1e-14)

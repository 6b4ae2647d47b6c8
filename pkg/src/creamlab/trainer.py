"""Iterative self-rewarding preference training on tabular policies.

One run is ``M0 -> SFT -> M1 -> ... -> M_{T+1}``. Each preference iteration
samples candidates from the current model, ranks them with the current and
previous checkpoints, measures their agreement, composes best/worst records
and takes one epoch of gradient steps on the method's loss.
"""

from __future__ import annotations

import dataclasses
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import consistency as cons
from .errors import ConfigError, DomainError, TrainingError
from .losses import LogRatioPair, cream_loss, dpo_loss, kl_penalty_loss, preference_objective, sft_loss
from .pairs import compose_pairs, records_to_arrays
from .policy import PolicyParams, sample_batch
from .rewarding import combine_rewards, intrinsic_reward, likelihood_reward, oracle_reward, rank
from .tasks import SyntheticTask, flip_rate, generate_task, initial_policy, perturb_rewards, proxy_accuracy

log = logging.getLogger(__name__)

METHODS = (
    "CREAM", "SRLM", "SRLM_KL", "CREAM_noRC", "ORACLE",
    "ENSEMBLE", "CREAM_dynamic", "CREAM_threshold",
)
_PARAM_REQUIRED = {"SRLM_KL", "CREAM_noRC", "ENSEMBLE"}
_METHOD_RE = re.compile(r"^\s*([A-Za-z_]+)\s*(?:\(\s*([^)]*?)\s*\))?\s*$")

# RNG stream ids, combined with (seed, iteration) into a SeedSequence
_SAMPLE, _NOISE_J, _NOISE_K, _SHUFFLE, _SFT_SHUFFLE, _INIT = 0, 1, 2, 3, 4, 5
_NOISE_MEMBER = 100


def parse_method(spec: str) -> tuple[str, float | str | None]:
    """``"SRLM_KL(0.5)"`` -> ``("SRLM_KL", 0.5)``; ``"ENSEMBLE(worst)"`` -> ``("ENSEMBLE", "worst")``."""
    m = _METHOD_RE.match(str(spec))
    if not m or m.group(1) not in METHODS:
        raise ConfigError("method", f"unknown method {spec!r}; expected one of {', '.join(METHODS)}")
    name, arg = m.group(1), m.group(2)
    if name == "ENSEMBLE":
        arg = arg or None
        if arg not in ("mean", "worst"):
            raise ConfigError("method", "ENSEMBLE needs a combiner: ENSEMBLE(mean) or ENSEMBLE(worst)")
        return name, arg
    if arg in (None, ""):
        if name in _PARAM_REQUIRED:
            raise ConfigError("method", f"{name} needs a numeric parameter, e.g. {name}(0.5)")
        if name == "CREAM_threshold":
            return name, 0.9
        return name, None
    if name not in _PARAM_REQUIRED and name != "CREAM_threshold":
        raise ConfigError("method", f"{name} takes no parameter")
    try:
        value = float(arg)
    except ValueError:
        raise ConfigError("method", f"parameter of {name} must be a number, got {arg!r}") from None
    if name == "SRLM_KL" and value < 0:
        raise ConfigError("method", "SRLM_KL lambda must be >= 0")
    if name in ("CREAM_noRC", "CREAM_threshold") and not 0.0 <= value <= 1.0:
        raise ConfigError("method", f"{name} parameter must lie in [0, 1]")
    return name, value


@dataclass(frozen=True)
class TaskConfig:
    num_prompts: int = 200
    responses_per_prompt: int = 8
    utility_distribution: str = "gap-controlled"
    margin: float = 0.3
    near_tie_fraction: float = 0.0
    near_tie_margin: float = 0.0
    sft_fraction: float = 1.0
    noise_level: float = 0.0
    seed: int | None = None  # defaults to the run seed


@dataclass(frozen=True)
class TrainConfig:
    method: str
    iterations: int = 3
    n_candidates: int = 5
    temperature: float = 0.8
    beta: float = 0.1
    learning_rate: float = 0.05
    sft_learning_rate: float | None = None
    sft_epochs: int = 3
    optimizer: str = "adam"
    batch_size: int = 8
    seed: int = 0
    init_scale: float = 1.0
    init_knowledge: float = 0.0
    partition_prompts: bool = False
    consistency_metric: str = "kendall"
    ensemble_lr_multipliers: tuple[float, ...] = (0.7, 1.0, 3.0)
    task: TaskConfig = field(default_factory=TaskConfig)

    def __post_init__(self):
        parse_method(self.method)
        checks = [
            ("iterations", self.iterations >= 0, "must be >= 0"),
            ("n_candidates", self.n_candidates >= 2, "must be >= 2"),
            ("temperature", self.temperature > 0, "must be > 0"),
            ("beta", self.beta > 0, "must be > 0"),
            ("learning_rate", 0 < self.learning_rate < np.inf, "must be finite and > 0"),
            ("sft_learning_rate", self.sft_learning_rate is None or 0 < self.sft_learning_rate < np.inf,
             "must be finite and > 0"),
            ("sft_epochs", self.sft_epochs >= 0, "must be >= 0"),
            ("optimizer", self.optimizer in ("adam", "sgd"), "must be 'adam' or 'sgd'"),
            ("batch_size", self.batch_size >= 1, "must be >= 1"),
            ("init_scale", self.init_scale >= 0, "must be >= 0"),
            ("consistency_metric", self.consistency_metric in ("kendall", "spearman", "toporder"),
             "must be 'kendall', 'spearman' or 'toporder'"),
            ("ensemble_lr_multipliers", len(self.ensemble_lr_multipliers) >= 2
             and all(m > 0 for m in self.ensemble_lr_multipliers), "needs >= 2 positive entries"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(name, msg)

    @property
    def method_name(self) -> str:
        return parse_method(self.method)[0]

    @property
    def method_param(self):
        return parse_method(self.method)[1]

    @property
    def task_seed(self) -> int:
        return self.seed if self.task.seed is None else self.task.seed

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["ensemble_lr_multipliers"] = list(self.ensemble_lr_multipliers)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        if "method" not in doc:
            raise ConfigError("method", "missing required field")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(doc) - set(known)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        kwargs = {}
        for name, value in doc.items():
            if name == "task":
                kwargs["task"] = _task_from_dict(value)
            elif name == "ensemble_lr_multipliers":
                kwargs[name] = tuple(_coerce(name, v, float) for v in value)
            else:
                kwargs[name] = _coerce(name, value, known[name].type)
        return cls(**kwargs)


def _task_from_dict(doc) -> TaskConfig:
    if not isinstance(doc, dict):
        raise ConfigError("task", "must be an object")
    known = {f.name: f for f in dataclasses.fields(TaskConfig)}
    kwargs = {}
    for name, value in doc.items():
        if name not in known:
            raise ConfigError(f"task.{name}", "unknown field")
        kwargs[name] = _coerce(f"task.{name}", value, known[name].type)
    return TaskConfig(**kwargs)


def _coerce(name, value, type_hint):
    hint = str(type_hint)
    if value is None:
        if "None" in hint:
            return None
        raise ConfigError(name, "must not be null")
    try:
        if hint.startswith("int"):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if hint.startswith("float"):
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if hint == "bool":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if hint == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise ConfigError(name, f"invalid value {value!r} (expected {hint})") from None
    return value


# ---------------------------------------------------------------------------
# optimisers
# ---------------------------------------------------------------------------

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


class Adam:
    """Adam with bias correction; state is per logit."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, lr: float):
    return Adam(lr) if name == "adam" else SGD(lr)


def _rng(seed: int, iteration: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration, stream])


# ---------------------------------------------------------------------------
# snapshots and stages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationSnapshot:
    label: str
    policy: PolicyParams
    proxy_accuracy: float
    loss_trace: tuple[float, ...] = ()
    report: cons.ConsistencyReport | None = None
    records: tuple = ()
    consistency_rate: float | None = None  # measured C, whatever the method trains with
    applied_c: float | None = None         # mean soft weight actually used in training
    flip_rate: float | None = None
    skipped: int = 0
    members: tuple[PolicyParams, ...] = ()  # ensemble siblings, trained at other learning rates

    @property
    def iteration(self) -> int:
        return int(self.label[1:])

    @property
    def mean_loss(self) -> float | None:
        return float(np.mean(self.loss_trace)) if self.loss_trace else None


def sft_stage(init: PolicyParams, task: SyntheticTask, config: TrainConfig) -> tuple[PolicyParams, list[float]]:
    """Minibatch NLL descent on the SFT split for ``config.sft_epochs`` epochs.

    Returns the new checkpoint (labelled M1) and the full-data SFT loss
    before training and after every epoch.
    """
    data = task.sft_data
    params = init.copy(label="M1")
    lr = config.sft_learning_rate or config.learning_rate
    opt = make_optimizer(config.optimizer, lr)
    rng = _rng(config.seed, 0, _SFT_SHUFFLE)
    trace = [sft_loss(params, data)[0]]
    for epoch in range(config.sft_epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            chunk = data[order[start:start + config.batch_size]]
            _, grad = sft_loss(params, chunk)
            opt.step(params.logits, grad)
        value = sft_loss(params, data)[0]
        if not np.isfinite(value) or not np.all(np.isfinite(params.logits)):
            raise TrainingError("sft", f"loss diverged at epoch {epoch + 1} (value {value})")
        trace.append(value)
    return params, trace


def _prompt_pool(task: SyntheticTask, config: TrainConfig, t: int) -> np.ndarray:
    prompts = np.arange(task.space.num_prompts)
    if not config.partition_prompts or config.iterations == 0:
        return prompts
    chunks = np.array_split(_rng(config.seed, 0, _SHUFFLE).permutation(prompts), config.iterations)
    return np.sort(chunks[(t - 1) % config.iterations])


def _agreement(metric: str, report: cons.ConsistencyReport) -> np.ndarray:
    """Per-prompt agreement on the tau scale [-1, 1]."""
    if metric == "kendall":
        return report.tau
    if metric == "spearman":
        return report.spearman
    return 2.0 * report.toporder - 1.0


def _train_records(
    policy: PolicyParams,
    reference: PolicyParams,
    arrays: dict,
    config: TrainConfig,
    lr: float,
    rng: np.random.Generator,
) -> list[float]:
    name, param = parse_method(config.method)
    opt = make_optimizer(config.optimizer, lr)
    n = len(arrays["prompt"])
    order = rng.permutation(n)
    trace = []
    for start in range(0, n, config.batch_size):
        idx = order[start:start + config.batch_size]
        if name == "SRLM_KL":
            value, grad = preference_objective(
                policy, reference, arrays["prompt"][idx], arrays["winner"][idx], arrays["loser"][idx],
                loss=kl_penalty_loss, beta=config.beta, lam=param,
            )
        else:
            value, grad = preference_objective(
                policy, reference, arrays["prompt"][idx], arrays["winner"][idx], arrays["loser"][idx],
                loss=cream_loss, beta=config.beta, c=arrays["c"][idx],
            )
        if not np.isfinite(value):
            raise TrainingError("preference", f"loss diverged (value {value})")
        opt.step(policy.logits, grad)
        trace.append(value)
    if not np.all(np.isfinite(policy.logits)):
        raise TrainingError("preference", "parameters diverged")
    return trace


def run_iteration(snapshots: list[IterationSnapshot], task: SyntheticTask, config: TrainConfig) -> IterationSnapshot:
    """Produce M_{t+1} from the history [M0, ..., M_t] (t >= 1)."""
    t = len(snapshots) - 1
    if t < 1:
        raise DomainError("run_iteration needs M0 and M1")
    name, param = parse_method(config.method)
    ref = snapshots[0].policy
    cur = snapshots[t].policy
    prev = snapshots[t - 1].policy
    noise = task.noise_level
    seed = config.seed
    label = f"M{t + 1}"

    prompts = _prompt_pool(task, config, t)
    batch = sample_batch(cur, prompts, config.n_candidates, config.temperature, _rng(seed, t, _SAMPLE))
    batch.attach(ref).attach(prev)

    # current-model ranking J
    members = snapshots[t].members
    if name == "ORACLE":
        r_cur = oracle_reward(task, batch)
    elif name == "ENSEMBLE":
        pool = members or (cur,)
        scores = []
        for m, member in enumerate(pool):
            member = member.copy(label=f"{label}-member{m}")
            batch.attach(member)
            r = perturb_rewards(intrinsic_reward(member, ref, batch), noise, _rng(seed, t, _NOISE_MEMBER + m))
            scores.append(r.scores)
        r_cur = combine_rewards(np.stack(scores), param, source=cur.label)
    else:
        r_cur = perturb_rewards(intrinsic_reward(cur, ref, batch), noise, _rng(seed, t, _NOISE_J))

    # previous-model ranking K; at t = 1 the previous model is the reference itself
    if t == 1:
        r_prev = likelihood_reward(ref, batch)
    else:
        r_prev = intrinsic_reward(prev, ref, batch)
    r_prev = perturb_rewards(r_prev, noise, _rng(seed, t, _NOISE_K))

    j_ranks, k_ranks = rank(r_cur), rank(r_prev)
    report = cons.ConsistencyReport.from_rankings(j_ranks, k_ranks, prompt_ids=prompts)
    agreement = _agreement(config.consistency_metric, report)
    measured_c = cons.consistency_rate(agreement)

    if name == "CREAM":
        c, variant = measured_c, "averaged"
    elif name == "CREAM_noRC":
        c, variant = float(param), "averaged"
    elif name == "CREAM_dynamic":
        c, variant = measured_c, "dynamic"
    elif name == "CREAM_threshold":
        c, variant = measured_c, ("thresholded", param)
    else:
        c, variant = 1.0, "averaged"
    records, skipped = compose_pairs(j_ranks, batch, c, variant, taus=agreement)
    if not records:
        raise TrainingError("compose", f"every prompt was degenerate at iteration {t}")

    arrays = records_to_arrays(records)
    new = cur.copy(label=label)
    trace = _train_records(new, ref, arrays, config, config.learning_rate, _rng(seed, t, _SHUFFLE))

    new_members = ()
    if name == "ENSEMBLE":
        pool = members or tuple(cur for _ in config.ensemble_lr_multipliers)
        trained = []
        for mult, member in zip(config.ensemble_lr_multipliers, pool):
            if mult == 1.0:
                trained.append(new)
                continue
            sib = member.copy(label=label)
            _train_records(sib, ref, arrays, config, config.learning_rate * mult, _rng(seed, t, _SHUFFLE))
            trained.append(sib)
        new_members = tuple(m.copy() for m in trained)

    snap = IterationSnapshot(
        label=label,
        policy=new.copy(),
        proxy_accuracy=proxy_accuracy(new, task),
        loss_trace=tuple(trace),
        report=report,
        records=tuple(records),
        consistency_rate=measured_c,
        applied_c=float(np.mean(arrays["c"])),
        flip_rate=flip_rate(task, records),
        skipped=skipped,
        members=new_members,
    )
    log.debug("%s acc=%.3f C=%.3f flips=%.3f", label, snap.proxy_accuracy, measured_c, snap.flip_rate)
    return snap


def build_task(config: TrainConfig) -> SyntheticTask:
    tc = config.task
    return generate_task(
        tc.num_prompts, tc.responses_per_prompt, config.task_seed, tc.utility_distribution,
        tc.margin, tc.near_tie_fraction, tc.near_tie_margin, tc.sft_fraction, tc.noise_level,
    )


def build_initial_policy(task: SyntheticTask, config: TrainConfig) -> PolicyParams:
    return initial_policy(
        task, seed=int(_rng(config.seed, 0, _INIT).integers(2**63)),
        scale=config.init_scale, knowledge=config.init_knowledge,
    )


def run_experiment(task: SyntheticTask, config: TrainConfig, init: PolicyParams | None = None) -> list[IterationSnapshot]:
    """M0 -> SFT -> M1 -> T preference iterations. Deterministic given the seed."""
    m0 = (init or build_initial_policy(task, config)).copy(label="M0")
    snaps = [IterationSnapshot("M0", m0.copy(), proxy_accuracy(m0, task))]
    m1, sft_trace = sft_stage(m0, task, config)
    members = ()
    if config.method_name == "ENSEMBLE":
        members = tuple(m1.copy() for _ in config.ensemble_lr_multipliers)
    snaps.append(IterationSnapshot("M1", m1.copy(), proxy_accuracy(m1, task), tuple(sft_trace[1:]), members=members))
    for _ in range(config.iterations):
        snaps.append(run_iteration(snaps, task, config))
    return snaps


# ---------------------------------------------------------------------------
# two-step (relabel / learn) harness
# ---------------------------------------------------------------------------

@dataclass
class HarnessTrace:
    """``losses[t]`` = L(theta_t, z_t); ``relabeled[t]`` = L(theta_t, z_{t+1})."""

    losses: list[float]
    relabeled: list[float]
    label_flips: list[int]
    learning_rate: float


def _pool_pairs(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    prompts, first, second = [], [], []
    n = batch.n_candidates
    for j, p in enumerate(batch.prompts):
        for a in range(n):
            for b in range(a + 1, n):
                ya, yb = batch.responses[j, a], batch.responses[j, b]
                if ya != yb:
                    prompts.append(p)
                    first.append(ya)
                    second.append(yb)
    return np.array(prompts, dtype=np.int64), np.array(first, dtype=np.int64), np.array(second, dtype=np.int64)


def _joint_loss(policy, reference, sft_data, pairs, z, beta):
    s_val, s_grad = sft_loss(policy, sft_data)
    p_val, p_grad = preference_objective(policy, reference, *pairs, loss=dpo_loss, beta=beta, z=z)
    return s_val + p_val, s_grad + p_grad


def _relabel(policy, reference, pairs, beta) -> np.ndarray:
    delta = LogRatioPair.from_policies(policy, reference, *pairs, beta=beta).delta
    return (delta >= 0).astype(np.int64)


def two_step_harness(
    task: SyntheticTask,
    config: TrainConfig,
    inner_steps: int,
    outer_steps: int = 20,
    learning_rate: float | None = None,
) -> HarnessTrace:
    """Alternate exact relabelling with plain gradient descent on a fixed pool.

    The pool is sampled once from the SFT model; every unordered pair of
    distinct candidates enters the DPO term. Without an explicit
    ``learning_rate`` the step is 1/L for a curvature bound L of the joint
    loss, so each inner step cannot increase it.
    """
    if inner_steps < 0 or outer_steps < 0:
        raise DomainError("step counts must be >= 0")
    ref = build_initial_policy(task, config)
    theta, _ = sft_stage(ref, task, config)
    batch = sample_batch(theta, np.arange(task.space.num_prompts), config.n_candidates,
                         config.temperature, _rng(config.seed, 1, _SAMPLE))
    pairs = _pool_pairs(batch)
    if pairs[0].size == 0:
        raise TrainingError("harness", "fixed pool holds no pair of distinct responses")
    sft_data = task.sft_data

    if learning_rate is None:
        # block-diagonal Hessian; per row: NLL part <= 1/2 * share, DPO part <= beta^2/4 * 2 * share
        rows = task.space.num_prompts
        sft_share = np.bincount(sft_data[:, 0], minlength=rows) / len(sft_data)
        pair_share = np.bincount(pairs[0], minlength=rows) / len(pairs[0])
        bound = np.max(0.5 * sft_share + 0.5 * config.beta ** 2 * pair_share)
        learning_rate = 1.0 / bound

    z = _relabel(theta, ref, pairs, config.beta)
    losses = [_joint_loss(theta, ref, sft_data, pairs, z, config.beta)[0]]
    relabeled, flips = [], []
    for _ in range(outer_steps):
        z_next = _relabel(theta, ref, pairs, config.beta)
        relabeled.append(_joint_loss(theta, ref, sft_data, pairs, z_next, config.beta)[0])
        flips.append(int(np.sum(z_next != z)))
        z = z_next
        for _ in range(inner_steps):
            value, grad = _joint_loss(theta, ref, sft_data, pairs, z, config.beta)
            theta.logits -= learning_rate * grad
            if not np.isfinite(value) or not np.all(np.isfinite(theta.logits)):
                raise TrainingError("harness", "inner minimisation diverged")
        losses.append(_joint_loss(theta, ref, sft_data, pairs, z, config.beta)[0])
    return HarnessTrace(losses, relabeled, flips, learning_rate)

"""Turning rankings into preference records."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .policy import CandidateBatch, PolicyParams
from .rewarding import RankedList

DEFAULT_THRESHOLD = 0.9


@dataclass(frozen=True)
class PreferenceRecord:
    prompt: int
    winner: int
    loser: int
    soft_weight: float
    per_sample_tau: float | None = None

    def __post_init__(self):
        if self.winner == self.loser:
            raise DomainError("winner and loser must differ")
        if not 0.0 <= self.soft_weight <= 1.0:
            raise DomainError(f"soft weight must lie in [0, 1], got {self.soft_weight}")

    def to_dict(self) -> dict:
        return {"prompt": self.prompt, "winner": self.winner, "loser": self.loser, "c": self.soft_weight}


def label_z(policy: PolicyParams, reference: PolicyParams, prompt: int, y: int, y_prime: int) -> int:
    """1 iff log-ratio(y) >= log-ratio(y'); ties label y as preferred."""
    lp = policy.log_probs()[prompt]
    lr = reference.log_probs()[prompt]
    return int(lp[y] - lr[y] >= lp[y_prime] - lr[y_prime])


def parse_variant(variant) -> tuple[str, float | None]:
    """Accept ``"averaged"``, ``"dynamic"``, ``"thresholded"``, ``"thresholded(0.7)"``
    or a ``("thresholded", x)`` tuple."""
    if isinstance(variant, tuple):
        name, x = variant
        return name, float(x)
    if variant.startswith("thresholded"):
        if "(" in variant:
            return "thresholded", float(variant[variant.index("(") + 1: variant.rindex(")")])
        return "thresholded", DEFAULT_THRESHOLD
    if variant in ("averaged", "dynamic"):
        return variant, None
    raise DomainError(f"unknown composition variant {variant!r}")


def compose_pairs(
    ranked: RankedList,
    batch: CandidateBatch,
    c: float,
    variant="averaged",
    taus=None,
) -> tuple[list[PreferenceRecord], int]:
    """Best-vs-worst record per prompt, plus the number of skipped prompts.

    The soft weight is ``c`` (averaged), the prompt's own (tau+1)/2 (dynamic),
    or 1 when (tau+1)/2 exceeds the threshold and ``c`` otherwise
    (thresholded). Prompts whose best and worst candidates are the same
    response carry no preference and are skipped.
    """
    name, x = parse_variant(variant)
    if not 0.0 <= c <= 1.0:
        raise DomainError(f"soft weight must lie in [0, 1], got {c}")
    ranks = ranked.ranks
    if taus is None and name != "averaged":
        raise DomainError(f"variant {name!r} needs per-prompt tau values")
    best = np.argmin(ranks, axis=1)
    worst = np.argmax(ranks, axis=1)
    rows = np.arange(ranks.shape[0])
    winners = batch.responses[rows, best]
    losers = batch.responses[rows, worst]

    records = []
    skipped = 0
    for j in rows:
        if winners[j] == losers[j]:
            skipped += 1
            continue
        tau = None if taus is None else float(taus[j])
        if name == "averaged":
            w = c
        else:
            own = (tau + 1.0) / 2.0
            if name == "dynamic":
                w = own
            else:
                w = 1.0 if own > x else c
        records.append(PreferenceRecord(int(batch.prompts[j]), int(winners[j]), int(losers[j]), float(w), tau))
    return records, skipped


def records_to_arrays(records) -> dict[str, np.ndarray]:
    return {
        "prompt": np.array([r.prompt for r in records], dtype=np.int64),
        "winner": np.array([r.winner for r in records], dtype=np.int64),
        "loser": np.array([r.loser for r in records], dtype=np.int64),
        "c": np.array([r.soft_weight for r in records], dtype=np.float64),
    }


def dump_jsonl(records, extra: dict | None = None) -> str:
    lines = []
    for r in records:
        doc = r.to_dict()
        if extra:
            doc.update(extra)
        lines.append(json.dumps(doc))
    return "".join(line + "\n" for line in lines)


def load_jsonl(text: str) -> list[PreferenceRecord]:
    out = []
    for line in text.splitlines():
        if line.strip():
            doc = json.loads(line)
            out.append(PreferenceRecord(doc["prompt"], doc["winner"], doc["loser"], doc["c"]))
    return out

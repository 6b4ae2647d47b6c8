import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from creamlab.errors import DomainError
from creamlab.losses import cream_loss, dpo_loss, preference_objective
from creamlab.pairs import (
    PreferenceRecord, compose_pairs, dump_jsonl, label_z, load_jsonl, parse_variant, records_to_arrays,
)
from creamlab.policy import CandidateBatch, PolicyParams
from creamlab.rewarding import RankedList, intrinsic_reward, rank


def test_record_invariants():
    with pytest.raises(DomainError):
        PreferenceRecord(0, 1, 1, 0.5)
    with pytest.raises(DomainError):
        PreferenceRecord(0, 1, 2, 1.5)


def test_label_z_rules(rng):
    p = PolicyParams(rng.normal(size=(2, 4)))
    assert label_z(p, p, 0, 1, 3) == 1  # all ratios tie at 0
    ref = PolicyParams(np.zeros((2, 4)))
    lo, hi = np.argsort(p.logits[1])[[0, -1]]
    assert label_z(p, ref, 1, lo, hi) == 0


@given(st.integers(0, 2**32 - 1))
def test_label_z_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    p, r = PolicyParams(rng.normal(size=(1, 5))), PolicyParams(rng.normal(size=(1, 5)))
    y, q = rng.choice(5, 2, replace=False)
    assert label_z(p, r, 0, y, q) == 1 - label_z(p, r, 0, q, y)


def test_compose_best_and_worst():
    batch = CandidateBatch([4], [[7, 2, 5]])
    records, skipped = compose_pairs(RankedList([[3, 1, 2]]), batch, 0.8)
    assert skipped == 0
    assert records == [PreferenceRecord(4, 2, 7, 0.8)]


def test_degenerate_prompts_skipped():
    batch = CandidateBatch([0, 1], [[3, 3, 3], [1, 2, 0]])
    ranked = RankedList([[1, 2, 3], [1, 2, 3]])
    records, skipped = compose_pairs(ranked, batch, 1.0)
    assert skipped == 1 and len(records) == 1
    # best/worst landing on duplicates of the same response also carry no preference
    batch2 = CandidateBatch([0], [[1, 2, 1]])
    assert compose_pairs(RankedList([[1, 2, 3]]), batch2, 1.0) == ([], 1)


def test_variants():
    batch = CandidateBatch([0, 1], [[0, 1, 2], [2, 1, 0]])
    ranked = RankedList([[1, 2, 3], [1, 2, 3]])
    taus = np.array([1.0, 0.2])
    dyn, _ = compose_pairs(ranked, batch, 0.5, "dynamic", taus)
    assert [r.soft_weight for r in dyn] == [1.0, 0.6]
    thr, _ = compose_pairs(ranked, batch, 0.5, "thresholded(0.9)", taus)
    assert [r.soft_weight for r in thr] == [1.0, 0.5]
    all_one, _ = compose_pairs(ranked, batch, 0.4, "thresholded", np.ones(2))
    assert all(r.soft_weight == 1.0 for r in all_one)
    with pytest.raises(DomainError):
        compose_pairs(ranked, batch, 0.5, "dynamic")
    with pytest.raises(DomainError):
        compose_pairs(ranked, batch, 0.5, "bogus")


def test_parse_variant():
    assert parse_variant("thresholded") == ("thresholded", 0.9)
    assert parse_variant("thresholded(0.7)") == ("thresholded", 0.7)
    assert parse_variant(("thresholded", 0.6)) == ("thresholded", 0.6)


def test_counts_add_up_and_winners_outscore_losers(rng):
    pol = PolicyParams(rng.normal(size=(30, 4)), label="M1")
    ref = PolicyParams(rng.normal(size=(30, 4)), label="M0")
    from creamlab.policy import sample_batch
    batch = sample_batch(pol, np.arange(30), 3, 1.0, 9).attach(ref)
    r = intrinsic_reward(pol, ref, batch)
    records, skipped = compose_pairs(rank(r), batch, 0.7)
    assert len(records) + skipped == 30
    ratio = pol.log_probs() - ref.log_probs()
    assert all(ratio[x.prompt, x.winner] >= ratio[x.prompt, x.loser] for x in records)


def test_soft_record_equals_two_dataset_form(rng):
    pol, ref = PolicyParams(rng.normal(size=(5, 4))), PolicyParams(rng.normal(size=(5, 4)))
    recs = [PreferenceRecord(int(p), int(w), int((w + 1) % 4), 0.65) for p, w in zip(range(5), rng.integers(0, 4, 5))]
    a = records_to_arrays(recs)
    v, g = preference_objective(pol, ref, a["prompt"], a["winner"], a["loser"], loss=cream_loss, c=a["c"])
    vf, gf = preference_objective(pol, ref, a["prompt"], a["winner"], a["loser"], loss=dpo_loss)
    vr, gr = preference_objective(pol, ref, a["prompt"], a["loser"], a["winner"], loss=dpo_loss)
    assert abs(v - (0.65 * vf + 0.35 * vr)) < 1e-12
    assert np.max(np.abs(g - (0.65 * gf + 0.35 * gr))) < 1e-12


def test_jsonl_round_trip():
    recs = [PreferenceRecord(0, 1, 2, 0.1 + 0.2), PreferenceRecord(3, 0, 4, 1.0)]
    text = dump_jsonl(recs)
    assert json.loads(text.splitlines()[0]) == {"prompt": 0, "winner": 1, "loser": 2, "c": 0.1 + 0.2}
    assert load_jsonl(text) == recs
    extra = json.loads(dump_jsonl(recs, {"iteration": 2}).splitlines()[1])
    assert extra["iteration"] == 2

from __future__ import annotations

import numpy as np
import pytest

from clarq.corpus import LAST_COMMENT, NEGATIVE, POSITIVE, SAMPLED_NEGATIVE, CandidatePair, LabeledSet, candidate_pairs
from clarq.encoder import PairScorerModel, TrainConfig, Vocabulary
from clarq.errors import CollapsedStage, DomainTooSmall
from clarq.evaluation import AnnotatedPair
from clarq.ingest import PostRecord
from clarq.refine import (
    NegativeSampler,
    RefineConfig,
    build_seed,
    classify_corpus,
    confidence_order,
    down_sample_step,
    kept_count,
    run_refinement,
    seed_positives,
    stage_seed,
)
from clarq.synthetic import bootstrap_corpus, separable_set

TS = "2020-01-01T00:00:00.000+00:00"
FAST = TrainConfig(epochs=10, batch_size=16, learning_rate=0.5, d_e=8, d_h=8, d_f=8)


def rec(pid: int, comments: list[str], domain: str = "d") -> PostRecord:
    return PostRecord(pid, domain, f"title {pid}", f"body {pid}", [f"answer {pid}"], [(c, TS) for c in comments])


def test_seed_keeps_last_comment_with_question_mark():
    corpus = [rec(1, ["a?", "b"]), rec(2, ["x", "which one?"]), rec(3, []), rec(4, ["why ? not"])]
    got = [(p.post_id, p.question_text, p.source) for p in seed_positives(corpus)]
    assert got == [(2, "which one?", LAST_COMMENT), (4, "why ? not", LAST_COMMENT)]


@pytest.mark.parametrize("n,frac,expected", [(0, 0.4, 0), (1, 0.4, 1), (2, 0.4, 1), (10, 0.4, 4), (11, 0.4, 4), (100, 0.29, 29), (7, 1.0, 7)])
def test_kept_count(n, frac, expected):
    assert kept_count(n, frac) == expected


def test_confidence_order_breaks_ties_by_key():
    a = CandidatePair(2, "d", "p", "b?", LAST_COMMENT, POSITIVE, 0.9)
    b = CandidatePair(1, "d", "p", "z?", LAST_COMMENT, POSITIVE, 0.9)
    c = CandidatePair(1, "d", "p", "a?", LAST_COMMENT, POSITIVE, 0.95)
    assert confidence_order([a, b, c]) == [c, b, a]


def test_stage_seed_depends_on_master_and_name():
    assert stage_seed(1, "D1") == stage_seed(1, "D1")
    assert len({stage_seed(1, "D1"), stage_seed(2, "D1"), stage_seed(1, "D2")}) == 3


def test_negatives_never_come_from_own_post():
    # post 1 also carries post 2's question as an earlier comment
    corpus = [rec(1, ["q2?", "q1?"]), rec(2, ["q2?"]), rec(3, ["q3?"]), rec(4, ["q4?"])]
    sampler = NegativeSampler.from_corpus(corpus)
    own = {r.post_id: {t for t, _ in r.comments} for r in corpus}
    seen = set()
    for seed in range(200):
        for neg in sampler.sample(seed_positives(corpus), 1.0, np.random.default_rng(seed)):
            assert neg.source == SAMPLED_NEGATIVE and neg.pseudo_label == NEGATIVE
            assert neg.question_text not in own[neg.post_id]
            seen.add((neg.post_id, neg.question_text))
    valid = {(r.post_id, q) for r in corpus for q in ("q1?", "q2?", "q3?", "q4?") if q not in own[r.post_id]}
    assert seen == valid


def test_negative_ratio_controls_count():
    corpus = [rec(i, [f"q{i}?"]) for i in range(10)]
    sampler = NegativeSampler.from_corpus(corpus)
    positives = seed_positives(corpus)
    assert len(sampler.sample(positives, 2.0, np.random.default_rng(0))) == 20
    assert len(sampler.sample(positives, 1.5, np.random.default_rng(0))) == 15


def test_seed_rejects_tiny_domain():
    corpus = [rec(1, ["a?"], "big"), rec(2, ["b?"], "big"), rec(3, ["c?"], "tiny")]
    with pytest.raises(DomainTooSmall) as err:
        build_seed(corpus, RefineConfig())
    assert err.value.domain == "tiny"


def test_seed_is_deterministic_and_balanced():
    corpus = [rec(i, ["hello", f"which {i}?"], "ab"[i % 2]) for i in range(20)]
    a = build_seed(corpus, RefineConfig(seed=3))
    b = build_seed(corpus, RefineConfig(seed=3))
    assert a.pairs == b.pairs
    assert len(a.positives()) == len(a.negatives()) == 20
    assert all(n.domain == "ab"[n.post_id % 2] for n in a.negatives())


def test_collapsed_stage_is_reported():
    cfg = RefineConfig(threshold=0.999, train=TrainConfig(epochs=0, d_e=4, d_h=4, d_f=4))
    with pytest.raises(CollapsedStage) as err:
        down_sample_step(separable_set(20, seed=0), cfg, None, stage_name="D1")
    assert err.value.stage_name == "D1"


def as_test_set(stage: LabeledSet) -> list[AnnotatedPair]:
    return [AnnotatedPair(p.domain, p.post_id, p.post_text, p.question_text, p.pseudo_label) for p in stage.pairs]


def test_single_iteration_ledger():
    test = as_test_set(separable_set(20, seed=1))
    result = run_refinement(separable_set(20, seed=0, stage_name="D0"), RefineConfig(n_iterations=1, train=FAST), test)
    assert [(r.stage_name, r.phase) for r in result.ledger.rows] == [("D1", "down"), ("S0", "up"), ("final", "final")]
    assert all(r.metrics is not None for r in result.ledger.rows)


def test_stage_containment_and_sizes():
    seed = separable_set(60, seed=2, stage_name="D0")
    result = run_refinement(seed, RefineConfig(n_iterations=2, train=FAST))
    s = result.stages
    for prev, cur in (("D0", "D1"), ("D1", "D2")):
        assert s[cur].positive_keys() <= s[prev].positive_keys()
    for up, down in (("S1", "D1"), ("S0", "D0")):
        assert s[up].positive_keys() <= s[down].positive_keys()
    for st in s.values():
        assert len(st.negatives()) == len(st.positives())


def test_down_sampling_drops_noise():
    bc = bootstrap_corpus(n_posts=800, n_test=10, n_topics=8, seed=3)
    cfg = RefineConfig(seed=1, train=TrainConfig(epochs=10, batch_size=16, learning_rate=0.5, d_e=16, d_h=16, d_f=16))
    seed = build_seed(bc.records, cfg)
    step = down_sample_step(seed, cfg, None, NegativeSampler.from_corpus(bc.records), stage_name="D1")

    def noise_rate(stage: LabeledSet) -> float:
        keys = stage.positive_keys()
        return len(keys & bc.noise_keys) / len(keys)

    assert noise_rate(step.stage) < noise_rate(seed)


def marker_model(vocab: Vocabulary, marker: str) -> PairScorerModel:
    """Scores a pair positive exactly when both sides contain ``marker``."""
    model = PairScorerModel.initialize(vocab, 1, 1, 1, 0)
    p = model.params
    p["emb"][:] = 0.0
    p["emb"][vocab.lookup(marker), 0] = 1.0
    for side in ("P", "Q"):
        p[f"{side}_Wx"][0] = [20.0, 0.0, 0.0, 20.0]  # marker opens the input gate with g ~ 1
        p[f"{side}_Wh"][:] = 0.0
        p[f"{side}_b"][:] = [-10.0, 10.0, 10.0, 0.0]  # otherwise input closed, memory kept
    p["W1"][:] = 10.0
    p["b1"][:] = -2.0
    p["W2"][0] = [-5.0, 5.0]
    p["b2"][:] = 0.0
    return model


def test_classify_corpus_emits_marker_pairs():
    data = separable_set(50, seed=7)
    vocab = Vocabulary.build(t for p in data.pairs for t in (p.post_text, p.question_text))
    model = marker_model(vocab, "zqx")
    pairs = [CandidatePair(p.post_id, p.domain, p.post_text, p.question_text, LAST_COMMENT) for p in data.pairs]
    answers = {(p.domain, p.post_id): ["ans"] for p in pairs}
    out = list(classify_corpus(model, pairs, RefineConfig(train=TrainConfig(d_e=1, d_h=1, d_f=1)), answers, batch_size=8))
    assert len(out) == 25
    assert [r.post_id for r in out] == [p.post_id for p in data.positives()]
    assert all(r.confidence >= 0.5 and r.answers == ["ans"] for r in out)


def test_candidate_pairs_cover_every_comment():
    corpus = [rec(1, ["a", "b?"]), rec(2, [])]
    assert [p.question_text for p in candidate_pairs(corpus)] == ["a", "b?"]

"""Acceptance suite: one test per criterion, each printed as a PASS/FAIL line.

Thresholds here are the contract; they are not tuned to the implementation.
"""

from __future__ import annotations

import math
import shutil
import time
from collections import Counter
from fractions import Fraction

import numpy as np
from click.testing import CliRunner

from clarq.cli import main
from clarq.corpus import POSITIVE
from clarq.encoder import (
    PairScorerModel,
    TrainConfig,
    Vocabulary,
    fit,
    grad_check,
    predict_proba,
    score_pair,
    score_pairs,
    tokenize,
)
from clarq.encoder.model import softmax
from clarq.evaluation import AnnotatedPair, RerankInstance, TfidfScorer, build_rerank_instances, evaluate_classifier, f1_score, rerank_report
from clarq.ingest import ingest_domain
from clarq.pipeline import load_config
from clarq.refine import NegativeSampler, RefineConfig, _train_cfg, build_seed, run_refinement
from clarq.synthetic import bootstrap_corpus, rerank_corpus, separable_set
from conftest import ACCEPTANCE_RESULTS, MINIDUMP


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[name] = (ok, detail)
    assert ok, detail


# 1 ----------------------------------------------------------------------------


def test_c1_gradient_check():
    start = time.monotonic()
    rng = np.random.default_rng(11)
    vocab = Vocabulary(f"w{i}" for i in range(40))
    worst = {}
    for label, (d_e, d_h, d_f) in (("d=1", (1, 1, 1)), ("full", (64, 128, 64))):
        model = PairScorerModel.initialize(vocab, d_e, d_h, d_f, seed=3)
        errs = []
        for trial in range(3):
            post = rng.integers(2, len(vocab), size=int(rng.integers(3, 9))).tolist()
            q = rng.integers(2, len(vocab), size=int(rng.integers(2, 6))).tolist()
            errs.append(grad_check(model, (post, q, trial % 2), epsilon=1e-5, n_params=60, seed=trial))
        worst[label] = max(errs)
    elapsed = time.monotonic() - start
    ok = max(worst.values()) <= 1e-3 and elapsed < 30
    record("C1 grad check", ok, f"max rel err d=1 {worst['d=1']:.2e}, full {worst['full']:.2e}, {elapsed:.1f}s")


# 2 ----------------------------------------------------------------------------


def test_c2_simplex_and_determinism():
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(1000):
        scale = 10.0 ** rng.uniform(-3, 3)
        logits = rng.normal(0, scale, size=(int(rng.integers(1, 6)), 2))
        p = softmax(logits)
        if not (np.all(np.isfinite(p)) and np.all(p >= 0) and np.all(p <= 1) and np.allclose(p.sum(axis=1), 1.0, atol=1e-12)):
            bad += 1
        if not np.array_equal(p, softmax(logits.copy())):
            bad += 1
    vocab = Vocabulary(f"w{i}" for i in range(12))
    for case in range(50):
        model = PairScorerModel.initialize(vocab, 3, 4, 3, seed=case)
        posts = [rng.integers(2, 14, size=int(rng.integers(1, 7))).tolist() for _ in range(4)]
        qs = [rng.integers(2, 14, size=int(rng.integers(1, 5))).tolist() for _ in range(4)]
        a = predict_proba(model, posts, qs)
        b = predict_proba(PairScorerModel.initialize(vocab, 3, 4, 3, seed=case), posts, qs)
        if not (np.array_equal(a, b) and np.allclose(a.sum(axis=1), 1.0, atol=1e-12)):
            bad += 1
    data = separable_set(60, seed=5)
    cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=0.3, d_e=6, d_h=6, d_f=6, seed=42)
    (m1, t1), (m2, t2) = fit(data, cfg), fit(data, cfg)
    same_trace = t1 == t2 and all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)
    record("C2 simplex + determinism", bad == 0 and same_trace, f"{bad} bad cases of 1050, traces identical={same_trace}")


# 3 ----------------------------------------------------------------------------


def _minidump_refinement():
    cfg = load_config(MINIDUMP / "config.yaml")
    records = []
    for domain in ("cooking", "travel"):
        records.extend(ingest_domain(MINIDUMP / "dump" / domain)[0])
    seed = build_seed(records, cfg.refine)
    return cfg, records, seed, run_refinement(seed, cfg.refine, None, NegativeSampler.from_corpus(records))


def test_c3_structural_invariants():
    start = time.monotonic()
    cfg, records, seed, result = _minidump_refinement()
    n = cfg.refine.n_iterations
    s = result.stages
    problems = []
    for i in range(1, n + 1):
        prev, cur = s[f"D{i - 1}"], s[f"D{i}"]
        if not cur.positive_keys() <= prev.positive_keys():
            problems.append(f"D{i} not within D{i - 1}")
        # recompute |D_temp| by replaying the deterministic training of this round
        model, _ = fit(prev, _train_cfg(cfg.refine, f"D{i}"))
        probs = score_pairs(model, prev.positives(), _train_cfg(cfg.refine, f"D{i}"))
        temp = int(np.sum(probs >= cfg.refine.threshold))
        expected = max(1, math.floor(0.4 * temp))
        if len(cur.positives()) != expected or cur.meta["confirmed"] != temp:
            problems.append(f"|D{i}|={len(cur.positives())}, expected {expected} from |D_temp|={temp}")
    for i in range(1, n + 1):
        if not s[f"S{i - 1}"].positive_keys() <= s[f"D{i - 1}"].positive_keys():
            problems.append(f"S{i - 1} not within D{i - 1}")
    rows = [r.stage_name for r in result.ledger.rows]
    if len(rows) != 2 * n + 1 or rows[-1] != "final":
        problems.append(f"ledger rows {rows}")
    elapsed = time.monotonic() - start
    ok = not problems and elapsed < 300
    record("C3 structural invariants", ok, "; ".join(problems) or f"N={n}, ledger {len(rows)} rows, {elapsed:.1f}s")


# 4 ----------------------------------------------------------------------------

TREND_CORPUS = dict(n_posts=15000, n_test=1000, n_topics=10, noise=0.1, seed=0)
TREND_REFINE = RefineConfig(
    n_iterations=3,
    seed=0,
    train=TrainConfig(epochs=10, batch_size=16, learning_rate=0.5, d_e=16, d_h=16, d_f=16),
)


def test_c4_trend_reproduction():
    start = time.monotonic()
    bc = bootstrap_corpus(**TREND_CORPUS)
    cfg = TREND_REFINE
    seed = build_seed(bc.records, cfg)
    result = run_refinement(seed, cfg, bc.test_set, NegativeSampler.from_corpus(bc.records))
    down = [r.metrics.precision for r in result.ledger.phase("down")]
    up_rows = result.ledger.phase("up")
    # recall of the model trained on S_N (first up row) against the one trained on S_0
    recall_sn = up_rows[0].metrics.recall
    recall_s0 = result.ledger.rows[-1].metrics.recall
    elapsed = time.monotonic() - start
    monotone = all(b >= a - 0.02 for a, b in zip(down, down[1:]))
    ok = monotone and recall_s0 - recall_sn >= 0.05 and elapsed < 600
    record(
        "C4 trend reproduction",
        ok,
        f"down precision {[round(p, 3) for p in down]}, recall S_N {recall_sn:.3f} -> S_0 {recall_s0:.3f}, {elapsed:.0f}s",
    )


# 5 ----------------------------------------------------------------------------


def test_c5_classifier_metrics_oracle():
    rng = np.random.default_rng(5)
    vocab = Vocabulary(f"w{i}" for i in range(10))
    mismatches = 0
    for case in range(500):
        model = PairScorerModel.initialize(vocab, 2, 2, 2, seed=case)
        n = int(rng.integers(1, 12))
        test = []
        for i in range(n):
            post = " ".join(f"w{j}" for j in rng.integers(0, 10, size=int(rng.integers(1, 5))))
            q = " ".join(f"w{j}" for j in rng.integers(0, 10, size=int(rng.integers(1, 4))))
            test.append(AnnotatedPair("d", i, post, q, "positive" if rng.random() < 0.5 else "negative"))
        threshold = float(rng.choice([0.3, 0.5, 0.7]))
        cfg = TrainConfig(d_e=2, d_h=2, d_f=2)
        got = evaluate_classifier(model, test, threshold, cfg)
        tp = fp = fn = tn = 0
        for a in test:
            _, p_pos = score_pair(model, tokenize(a.post_text, vocab, 300), tokenize(a.question_text, vocab, 60))
            pred, gold = p_pos >= threshold, a.gold_label == POSITIVE
            tp += pred and gold
            fp += pred and not gold
            fn += gold and not pred
            tn += not pred and not gold
        if (got.tp, got.fp, got.fn, got.tn) != (tp, fp, fn, tn):
            mismatches += 1
    f1 = f1_score(0.736, 0.601)
    ok = mismatches == 0 and abs(f1 - 0.662) <= 0.001
    record("C5 classifier metrics", ok, f"{mismatches} mismatches over 500 fixtures, f1(0.736, 0.601)={f1:.4f}")


# 6 ----------------------------------------------------------------------------


def _brute_force(instances, scores_of):
    """Rank by counting strictly better candidates plus earlier ties."""
    ranks = []
    for inst, scores in zip(instances, scores_of):
        g = inst.gold_index
        better = sum(1 for i, s in enumerate(scores) if s > scores[g] or (s == scores[g] and i < g))
        ranks.append(better + 1)
    n = len(ranks)
    p_at = {k: float(Fraction(sum(1 for r in ranks if r <= k), k * n)) for k in range(1, 6)}
    return p_at, float(sum(Fraction(1, r) for r in ranks) / n)


def test_c6_rerank_metrics_oracle():
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(100):
        instances, table = [], {}
        for j in range(int(rng.integers(1, 20))):
            size = int(rng.integers(5, 15))
            cands = [f"i{j}c{c}" for c in range(size)]
            # coarse scores so ties occur
            for c in cands:
                table[c] = float(rng.integers(0, 4))
            instances.append(RerankInstance(f"p{j}", "cq?", cands, int(rng.integers(size))))
        report = rerank_report(instances, lambda q, a: table[a], use_cq=True)
        p_at, mrr = _brute_force(instances, [[table[c] for c in inst.candidates] for inst in instances])
        if report.mrr != mrr or any(report.p_at_k[k] != p_at[k] for k in range(1, 6)):
            mismatches += 1
    perfect = [RerankInstance("p", None, [f"c{i}" for i in range(10)], g) for g in range(10)]
    reports = [rerank_report([inst], lambda q, a, inst=inst: float(a == inst.candidates[inst.gold_index]), use_cq=False) for inst in perfect]
    perfect_ok = all(r.mrr == 1.0 and all(r.p_at_k[k] == 1 / k for k in range(1, 6)) for r in reports)
    record("C6 rerank metrics", mismatches == 0 and perfect_ok, f"{mismatches} mismatches over 100 sets, perfect ranker ok={perfect_ok}")


# 7 ----------------------------------------------------------------------------


def test_c7_clarification_helps_rerank():
    start = time.monotonic()
    rc = rerank_corpus(n_posts=150, seed=0)
    instances = build_rerank_instances(rc.records, ["alpha", "beta"], 40, 30, np.random.default_rng(7), rc.questions)
    scorer = TfidfScorer(a for r in rc.records for a in r.answers)
    without = rerank_report(instances, scorer, use_cq=False)
    with_cq = rerank_report(instances, scorer, use_cq=True)
    elapsed = time.monotonic() - start
    gain = with_cq.mrr - without.mrr
    record("C7 rerank gain", gain >= 0.03 and elapsed < 120, f"MRR {without.mrr:.3f} -> {with_cq.mrr:.3f} (+{gain:.3f}), {elapsed:.1f}s")


# 8 ----------------------------------------------------------------------------


def test_c8_byte_identical_runs(tmp_path, monkeypatch):
    monkeypatch.delenv("CLARQ_WORKDIR", raising=False)
    outputs = []
    for run in ("a", "b"):
        root = tmp_path / run
        shutil.copytree(MINIDUMP, root)
        result = CliRunner().invoke(main, ["run", "--config", str(root / "config.yaml")])
        assert result.exit_code == 0, result.stderr
        outputs.append({name: (root / "work" / name).read_bytes() for name in ("clarq.jsonl", "ledger.csv", "stats.csv", "stats.svg")})
    same = [name for name in outputs[0] if outputs[0][name] == outputs[1][name]]
    lines = outputs[0]["clarq.jsonl"].count(b"\n")
    record("C8 byte-identical runs", len(same) == 4, f"identical: {same}, clarq.jsonl {lines} lines")


# 9 ----------------------------------------------------------------------------

# counted from the fixture rows: 100 questions per domain, one in seven unanswered,
# three comments per domain pointing at posts that do not exist
GROUND_TRUTH = {
    "cooking": dict(questions=100, answered=86, answers=132, comments_attached=175, comments_on_unanswered=33, comments_on_answers=38, orphan_comments=3),
    "travel": dict(questions=100, answered=86, answers=135, comments_attached=186, comments_on_unanswered=31, comments_on_answers=37, orphan_comments=3),
}


def test_c9_ingestion_fidelity():
    problems = []
    for domain, truth in GROUND_TRUTH.items():
        records, report = ingest_domain(MINIDUMP / "dump" / domain)
        for key, value in truth.items():
            if getattr(report, key) != value:
                problems.append(f"{domain}.{key}={getattr(report, key)} != {value}")
        comments = Counter((r.post_id, t, ts) for r in records for t, ts in r.comments)
        if sum(comments.values()) != truth["comments_attached"] or any(c > 1 for c in comments.values()):
            problems.append(f"{domain}: comment loss or duplication")
        if len({r.post_id for r in records}) != truth["answered"] or sum(len(r.answers) for r in records) != truth["answers"]:
            problems.append(f"{domain}: post or answer loss")
    record("C9 ingestion fidelity", not problems, "; ".join(problems) or "counts match for cooking and travel")

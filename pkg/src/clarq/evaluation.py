"""Classifier metrics on an annotated test set, and the answer-reranking harness."""

from __future__ import annotations

import csv
import math
import os
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from clarq.corpus import ANY_COMMENT, NEGATIVE, POSITIVE, CandidatePair
from clarq.encoder.model import PairScorerModel
from clarq.encoder.train import TrainConfig, fit, score_pairs
from clarq.encoder.vocab import split_tokens
from clarq.errors import DomainTooSmall, MissingCq, SchemaError
from clarq.ingest import PostRecord

K_VALUES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class AnnotatedPair:
    domain: str
    post_id: int
    post_text: str
    question_text: str
    gold_label: str

    def __post_init__(self):
        if self.gold_label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"gold_label must be positive/negative, got {self.gold_label!r}")

    @property
    def pair(self) -> CandidatePair:
        return CandidatePair(self.post_id, self.domain, self.post_text, self.question_text, ANY_COMMENT)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def confusion_metrics(predicted: Iterable[bool], gold: Iterable[bool]) -> Metrics:
    tp = fp = fn = tn = 0
    for p, g in zip(predicted, gold, strict=True):
        if p and g:
            tp += 1
        elif p:
            fp += 1
        elif g:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Metrics(precision, recall, f1_score(precision, recall), tp, fp, fn, tn)


def evaluate_classifier(
    model: PairScorerModel, test: Sequence[AnnotatedPair], threshold: float = 0.5, cfg: TrainConfig | None = None
) -> Metrics:
    """Precision/recall/F1 of ``prob_positive >= threshold`` against gold labels."""
    if not test:
        raise ValueError("test set is empty")
    cfg = cfg or TrainConfig()
    probs = score_pairs(model, [a.pair for a in test], cfg)
    return confusion_metrics((p >= threshold for p in probs), (a.gold_label == POSITIVE for a in test))


def load_annotated(path: str | os.PathLike, post_texts: Mapping[tuple[str, int], str]) -> list[AnnotatedPair]:
    """Read ``domain,post_id,question_text,gold_label`` rows, joining post text."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["domain", "post_id", "question_text", "gold_label"]
        if reader.fieldnames != expected:
            raise SchemaError(f"{path}: columns {reader.fieldnames}, expected {expected}")
        for row in reader:
            key = (row["domain"], int(row["post_id"]))
            if key not in post_texts:
                raise SchemaError(f"{path}: post {key} is not in the ingested corpus")
            out.append(AnnotatedPair(key[0], key[1], post_texts[key], row["question_text"], row["gold_label"]))
    return out


def write_annotated(pairs: Iterable[AnnotatedPair], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["domain", "post_id", "question_text", "gold_label"])
        for a in pairs:
            writer.writerow([a.domain, a.post_id, a.question_text, a.gold_label])


# --- reranking -----------------------------------------------------------------

Scorer = Callable[[str, str], float]


@dataclass(frozen=True)
class RerankInstance:
    post_text: str
    clarification_question: str | None
    candidates: list[str]
    gold_index: int
    domain: str = ""
    post_id: int = -1

    def query(self, use_cq: bool) -> str:
        if not use_cq:
            return self.post_text
        if not self.clarification_question:
            raise MissingCq(f"instance for post {self.post_id} has no clarification question")
        return f"{self.post_text} {self.clarification_question}"


@dataclass(frozen=True)
class RerankReport:
    variant: str
    p_at_k: dict[int, float]
    mrr: float
    hits: dict[int, int]
    n: int


class TfidfScorer:
    """Cosine similarity of tf-idf vectors; idf fitted on a document collection.

    ``idf(t) = ln((1 + N) / (1 + df(t))) + 1`` with raw term counts as tf.
    """

    def __init__(self, documents: Iterable[str]):
        df: Counter = Counter()
        n = 0
        for doc in documents:
            df.update(set(split_tokens(doc)))
            n += 1
        self.n_docs = n
        self.idf = {term: math.log((1 + n) / (1 + count)) + 1.0 for term, count in df.items()}
        self._unseen = math.log(1 + n) + 1.0
        self._cache: dict[str, dict[str, float]] = {}

    def vector(self, text: str) -> dict[str, float]:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        tf = Counter(split_tokens(text))
        vec = {t: c * self.idf.get(t, self._unseen) for t, c in tf.items()}
        norm = math.sqrt(sum(w * w for w in vec.values()))
        if norm > 0:
            vec = {t: w / norm for t, w in vec.items()}
        self._cache[text] = vec
        return vec

    def __call__(self, query: str, answer: str) -> float:
        q = self.vector(query)
        a = self.vector(answer)
        if len(a) < len(q):
            q, a = a, q
        return sum(w * a.get(t, 0.0) for t, w in q.items())


class DualEncoderScorer:
    """Post/answer relevance from a pair scorer trained on (post, answer) pairs."""

    def __init__(self, model: PairScorerModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg

    @classmethod
    def fit(cls, records: Sequence[PostRecord], cfg: TrainConfig, seed: int = 0) -> "DualEncoderScorer":
        from clarq.corpus import LAST_COMMENT, SAMPLED_NEGATIVE, LabeledSet

        cfg = TrainConfig(**{**cfg.to_dict(), "max_question_len": cfg.max_post_len})
        rng = np.random.default_rng(seed)
        by_domain: dict[str, list[PostRecord]] = {}
        for r in records:
            by_domain.setdefault(r.domain, []).append(r)
        pairs = []
        for domain in sorted(by_domain):
            posts = by_domain[domain]
            if len(posts) < 2:
                continue
            for i, r in enumerate(posts):
                gold = r.answers[0]
                pairs.append(CandidatePair(r.post_id, domain, r.post_text, gold, LAST_COMMENT, POSITIVE))
                j = int(rng.integers(len(posts) - 1))
                other = posts[j + (j >= i)]
                if other.answers[0] != gold:
                    pairs.append(
                        CandidatePair(r.post_id, domain, r.post_text, other.answers[0], SAMPLED_NEGATIVE, NEGATIVE)
                    )
        model, _ = fit(LabeledSet("answer-scorer", pairs, seed), cfg)
        return cls(model, cfg)

    def score_many(self, query: str, answers: Sequence[str]) -> np.ndarray:
        pairs = [CandidatePair(0, "", query, a, ANY_COMMENT) for a in answers]
        return score_pairs(self.model, pairs, self.cfg)

    def __call__(self, query: str, answer: str) -> float:
        return float(self.score_many(query, [answer])[0])


def build_rerank_instances(
    corpus: Sequence[PostRecord],
    domains: Sequence[str],
    n_per_domain: int,
    pool_size: int,
    rng: np.random.Generator,
    questions: Mapping[tuple[str, int], str] | None = None,
) -> list[RerankInstance]:
    """Sample posts per domain and surround each gold answer with distractors.

    When ``questions`` is given, only posts that have a clarification
    question are sampled, and the question is attached to the instance.
    Distractors are drawn without replacement from other posts' answers in
    the same domain, skipping any text equal to the gold answer.
    """
    by_domain: dict[str, list[PostRecord]] = {}
    for record in corpus:
        by_domain.setdefault(record.domain, []).append(record)
    instances = []
    for domain in domains:
        posts = sorted(by_domain.get(domain, []), key=lambda r: r.post_id)
        if len(posts) < pool_size:
            raise DomainTooSmall(domain, f"{len(posts)} answered posts, need {pool_size}")
        eligible = [r for r in posts if questions is None or (domain, r.post_id) in questions]
        if len(eligible) < n_per_domain:
            raise DomainTooSmall(domain, f"{len(eligible)} eligible posts, need {n_per_domain}")
        for pick in rng.choice(len(eligible), size=n_per_domain, replace=False):
            record = eligible[int(pick)]
            gold = record.answers[0]
            pool: list[str] = []
            seen = {gold}
            for other in posts:
                if other.post_id == record.post_id:
                    continue
                for answer in other.answers:
                    if answer not in seen:
                        seen.add(answer)
                        pool.append(answer)
            if len(pool) < pool_size - 1:
                raise DomainTooSmall(domain, f"{len(pool)} distinct distractor answers, need {pool_size - 1}")
            distractors = [pool[int(i)] for i in rng.choice(len(pool), size=pool_size - 1, replace=False)]
            gold_index = int(rng.integers(pool_size))
            candidates = distractors[:gold_index] + [gold] + distractors[gold_index:]
            cq = questions.get((domain, record.post_id)) if questions is not None else None
            instances.append(RerankInstance(record.post_text, cq, candidates, gold_index, domain, record.post_id))
    return instances


def rerank(scorer: Scorer, instance: RerankInstance, use_cq: bool) -> list[int]:
    """Candidate indices by descending score; ties keep ascending index."""
    query = instance.query(use_cq)
    score_many = getattr(scorer, "score_many", None)
    if score_many is not None:
        scores = [float(s) for s in score_many(query, instance.candidates)]
    else:
        scores = [float(scorer(query, c)) for c in instance.candidates]
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def rerank_report(instances: Sequence[RerankInstance], scorer: Scorer, use_cq: bool) -> RerankReport:
    """P@k (hits in the top k divided by k, averaged) and MRR of the gold answer."""
    if not instances:
        raise ValueError("no rerank instances")
    ranks = []
    for inst in instances:
        order = rerank(scorer, inst, use_cq)
        ranks.append(order.index(inst.gold_index) + 1)
    n = len(ranks)
    hits = {k: sum(1 for r in ranks if r <= k) for k in K_VALUES}
    p_at_k = {k: hits[k] / (k * n) for k in K_VALUES}
    # exact rational sum, rounded once, so the value does not depend on instance order
    mrr = float(sum(Fraction(1, r) for r in ranks) / n)
    return RerankReport("with_cq" if use_cq else "without_cq", p_at_k, mrr, hits, n)


def write_rerank_csv(without: RerankReport, with_cq: RerankReport, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["metric", "without_cq", "with_cq"])
        for k in K_VALUES:
            writer.writerow([f"P@{k}", f"{without.p_at_k[k]:.6f}", f"{with_cq.p_at_k[k]:.6f}"])
        writer.writerow(["MRR", f"{without.mrr:.6f}", f"{with_cq.mrr:.6f}"])


def write_metrics_csv(rows: Iterable[tuple[int, Metrics]], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["iteration", "precision", "recall", "f1"])
        for iteration, m in rows:
            writer.writerow([iteration, f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.f1:.6f}"])

"""Seeded synthetic corpora with known ground truth.

These exist so the classifier, the refinement loop and the reranking harness
can be exercised at desk scale where the correct answer is fixed by the
generating rule rather than by annotation.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from clarq.corpus import LAST_COMMENT, NEGATIVE, POSITIVE, SAMPLED_NEGATIVE, CandidatePair, LabeledSet
from clarq.evaluation import AnnotatedPair
from clarq.ingest import PostRecord, format_timestamp

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]

FILLER = (
    "the a my it is was i have this that with for on in and to of when after before "
    "today again still just also some any every way thing setup version problem issue"
).split()
GENERIC_QUESTIONS = [
    "did you search the site before asking ?",
    "why is this tagged like that ?",
    "is this a duplicate of an older question ?",
    "can you accept an answer please ?",
    "have you tried asking on chat ?",
    "why the downvote ?",
    "is this still relevant ?",
    "who upvoted this ?",
]
REMARKS = [
    "thanks for sharing this",
    "same thing happens to me",
    "+1 good question",
    "see the faq for details",
    "welcome to the site",
    "this helped me a lot",
]


def pseudo_words(n: int, rng: np.random.Generator, syllables: int = 3) -> list[str]:
    words: list[str] = []
    seen = set(FILLER)
    while len(words) < n:
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syllables))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def _filler(rng: np.random.Generator, lo: int, hi: int) -> list[str]:
    return [FILLER[i] for i in rng.integers(len(FILLER), size=int(rng.integers(lo, hi + 1)))]


def separable_set(n_pairs: int, seed: int, marker: str = "zqx", stage_name: str = "toy") -> LabeledSet:
    """Half positives, half negatives; positives carry ``marker`` in post and question."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        positive = i % 2 == 0
        post = _filler(rng, 4, 9)
        question = _filler(rng, 2, 5)
        if positive:
            post.insert(int(rng.integers(len(post) + 1)), marker)
            question.insert(int(rng.integers(len(question) + 1)), marker)
        pairs.append(
            CandidatePair(
                post_id=i,
                domain="toy",
                post_text=" ".join(post),
                question_text=" ".join(question) + " ?",
                source=LAST_COMMENT if positive else SAMPLED_NEGATIVE,
                pseudo_label=POSITIVE if positive else NEGATIVE,
            )
        )
    return LabeledSet(stage_name, pairs, seed)


@dataclass
class BootstrapCorpus:
    records: list[PostRecord]
    test_set: list[AnnotatedPair]
    noise_keys: set[tuple[int, str]]  # pseudo-positive pairs whose gold label is negative
    hard_keys: set[tuple[int, str]]


def _clarifying(topic_word: str, hard: bool, rng: np.random.Generator) -> str:
    if not hard:
        return f"which {topic_word} {FILLER[rng.integers(len(FILLER))]} ?"
    tail = " ".join(_filler(rng, 6, 9))
    return f"{topic_word} {tail} ?"


def bootstrap_corpus(
    n_posts: int = 600,
    n_test: int = 200,
    n_topics: int = 24,
    noise: float = 0.1,
    hard_fraction: float = 0.4,
    seed: int = 0,
    domains: tuple[str, ...] = ("alpha", "beta"),
) -> BootstrapCorpus:
    """Posts whose last comment is a clarifying question, with injected noise.

    A clarifying question mentions one of its post's topic words; easy ones
    are short, hard ones bury the topic word in front of a long generic
    tail. A ``noise`` fraction of last comments are instead generic
    off-topic questions: they pass the question-mark filter but are not
    clarifications. The held-out test set holds comments on their own posts,
    gold positives and gold negatives 7:3; its negatives are generic
    questions, the kind of non-clarifying comment that survives the
    question-mark filter.
    """
    rng = np.random.default_rng(seed)
    topics = [pseudo_words(3, rng) for _ in range(n_topics)]
    start = datetime(2015, 1, 1, tzinfo=timezone.utc)
    records: list[PostRecord] = []
    noise_keys: set[tuple[int, str]] = set()
    hard_keys: set[tuple[int, str]] = set()

    def make_post(post_id: int, domain: str) -> tuple[str, str, list[str], list[str]]:
        topic = topics[int(rng.integers(n_topics))]
        words = list(topic[:2]) + _filler(rng, 5, 10)
        rng.shuffle(words)
        title = f"how to {topic[0]} {FILLER[rng.integers(len(FILLER))]}"
        answer = f"use the {topic[1]} with {topic[2]} " + " ".join(_filler(rng, 3, 6))
        return title, " ".join(words), topic, [answer]

    for pid in range(n_posts):
        domain = domains[pid % len(domains)]
        title, body, topic, answers = make_post(pid, domain)
        comments = [REMARKS[rng.integers(len(REMARKS))] for _ in range(int(rng.integers(0, 3)))]
        roll = rng.random()
        if roll < noise:
            last = GENERIC_QUESTIONS[rng.integers(len(GENERIC_QUESTIONS))]
            noise_keys.add((pid, last))
        else:
            hard = rng.random() < hard_fraction
            last = _clarifying(topic[int(rng.integers(2))], hard, rng)
            if hard:
                hard_keys.add((pid, last))
        comments.append(last)
        stamps = [format_timestamp(start + timedelta(days=pid, minutes=5 * k)) for k in range(len(comments))]
        records.append(PostRecord(pid, domain, title, body, answers, list(zip(comments, stamps))))

    test: list[AnnotatedPair] = []
    for k in range(n_test):
        pid = n_posts + k
        domain = domains[pid % len(domains)]
        title, body, topic, _ = make_post(pid, domain)
        post_text = f"{title} {body}"
        if k % 10 < 7:
            question = _clarifying(topic[int(rng.integers(2))], rng.random() < hard_fraction, rng)
            test.append(AnnotatedPair(domain, pid, post_text, question, POSITIVE))
        else:
            question = GENERIC_QUESTIONS[rng.integers(len(GENERIC_QUESTIONS))]
            test.append(AnnotatedPair(domain, pid, post_text, question, NEGATIVE))
    return BootstrapCorpus(records, test, noise_keys, hard_keys)


@dataclass
class RerankCorpus:
    records: list[PostRecord]
    questions: dict[tuple[str, int], str]


def rerank_corpus(n_posts: int = 150, seed: int = 0, domains: tuple[str, ...] = ("alpha", "beta")) -> RerankCorpus:
    """Posts whose clarification question names tokens of the gold answer.

    Post and answer share one topic word; the answer also carries a detail
    word that appears in the clarification question but never in the post.
    """
    rng = np.random.default_rng(seed)
    topic_words = pseudo_words(max(8, n_posts // 6), rng)
    details = pseudo_words(n_posts, rng, syllables=4)
    records = []
    questions = {}
    start = datetime(2016, 1, 1, tzinfo=timezone.utc)
    for pid in range(n_posts):
        domain = domains[pid % len(domains)]
        topic = topic_words[int(rng.integers(len(topic_words)))]
        detail = details[pid]
        body = " ".join(_filler(rng, 6, 10) + [topic])
        answer = " ".join([topic, detail] + _filler(rng, 6, 10))
        question = f"is it the {detail} one ?"
        ts = format_timestamp(start + timedelta(hours=pid))
        records.append(PostRecord(pid, domain, f"about {topic}", body, [answer], [(question, ts)]))
        questions[(domain, pid)] = question
    return RerankCorpus(records, questions)

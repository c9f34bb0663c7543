"""Seed construction and the two-phase iterative refinement of the pair classifier.

Down-sampling trains a fresh classifier on the previous stage, keeps the
pairs it confirms as positive, and retains only the most confident
``keep_fraction`` of them. Up-sampling then walks back through the
down-sampled stages, each time training on the newest set and admitting
every confirmed positive of the next larger stage. A final classifier is
trained on the last up-sampled set.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from clarq.corpus import (
    LAST_COMMENT,
    NEGATIVE,
    POSITIVE,
    SAMPLED_NEGATIVE,
    CandidatePair,
    ClarQRecord,
    LabeledSet,
)
from clarq.encoder.model import PairScorerModel
from clarq.encoder.train import TrainConfig, fit, score_pairs
from clarq.errors import CollapsedStage, DomainTooSmall
from clarq.evaluation import AnnotatedPair, Metrics, evaluate_classifier
from clarq.ingest import PostRecord

logger = logging.getLogger(__name__)

UPSAMPLE_LATEST = "latest"
UPSAMPLE_DEEPEST = "deepest"


@dataclass(frozen=True)
class RefineConfig:
    n_iterations: int = 5
    keep_fraction: float = 0.4
    negative_ratio: float = 1.0
    seed: int = 0
    threshold: float = 0.5
    train: TrainConfig = field(default_factory=TrainConfig)
    # "latest": up-sampling round i trains on S_i; "deepest": every round trains on S_N
    upsample_train_on: str = UPSAMPLE_LATEST

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("keep_fraction must lie in (0, 1]")
        if self.negative_ratio <= 0:
            raise ValueError("negative_ratio must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.upsample_train_on not in (UPSAMPLE_LATEST, UPSAMPLE_DEEPEST):
            raise ValueError(f"unknown upsample_train_on {self.upsample_train_on!r}")


def stage_seed(master: int, name: str) -> int:
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def stage_rng(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(master, name))


def kept_count(n_confirmed: int, keep_fraction: float) -> int:
    """``max(1, floor(keep_fraction * n))`` for non-empty input, else 0."""
    if n_confirmed == 0:
        return 0
    # tolerance absorbs products like 0.29 * 100 = 28.999999999999996
    return max(1, math.floor(keep_fraction * n_confirmed + 1e-9))


def confidence_order(pairs: Iterable[CandidatePair]) -> list[CandidatePair]:
    return sorted(pairs, key=lambda p: (-p.confidence, p.post_id, p.question_text))


# --- seed and negatives ---------------------------------------------------------


def seed_positives(corpus: Iterable[PostRecord]) -> list[CandidatePair]:
    """Last comment of every post, kept when it contains a question mark."""
    out = []
    for record in corpus:
        if not record.comments:
            continue
        text, _ts = record.comments[-1]
        if "?" in text:
            out.append(CandidatePair(record.post_id, record.domain, record.post_text, text, LAST_COMMENT, POSITIVE))
    return out


def _instance_pools(positives: Iterable[CandidatePair]) -> dict[str, list[str]]:
    # one entry per positive pair, so a question text recurring on many posts
    # is drawn as a negative as often as it occurs as a positive
    pools: dict[str, list[tuple[int, str]]] = {}
    for pair in positives:
        pools.setdefault(pair.domain, []).append((pair.post_id, pair.question_text))
    return {d: [text for _, text in sorted(entries)] for d, entries in pools.items()}


class NegativeSampler:
    """Draws same-domain questions that were never posted on the paired post.

    The pool holds one entry per seed positive, so sampling is uniform over
    question occurrences rather than distinct texts.
    """

    def __init__(self, pools: Mapping[str, Sequence[str]], exclusions: Mapping[tuple[str, int], set[str]]):
        self.pools = {d: list(pool) for d, pool in pools.items()}
        self.exclusions = exclusions

    @classmethod
    def from_corpus(cls, corpus: Sequence[PostRecord]) -> "NegativeSampler":
        exclusions = {(r.domain, r.post_id): {text for text, _ in r.comments} for r in corpus}
        return cls(_instance_pools(seed_positives(corpus)), exclusions)

    @classmethod
    def from_stage(cls, labeled: LabeledSet) -> "NegativeSampler":
        exclusions: dict[tuple[str, int], set[str]] = {}
        for pair in labeled.positives():
            exclusions.setdefault((pair.domain, pair.post_id), set()).add(pair.question_text)
        return cls(_instance_pools(labeled.positives()), exclusions)

    def _draw(self, positive: CandidatePair, k: int, rng: np.random.Generator) -> list[str]:
        pool = self.pools.get(positive.domain, [])
        excluded = self.exclusions.get((positive.domain, positive.post_id), set()) | {positive.question_text}
        chosen: list[str] = []
        tries = 0
        # rejection sampling is uniform over the valid pool and cheap when exclusions are rare
        while len(chosen) < k and tries < 20 * k + 20 and pool:
            tries += 1
            cand = pool[int(rng.integers(len(pool)))]
            if cand not in excluded and cand not in chosen:
                chosen.append(cand)
        if len(chosen) < k:
            valid = sorted({q for q in pool if q not in excluded and q not in chosen})
            if len(valid) < k - len(chosen):
                raise DomainTooSmall(positive.domain, f"no valid negative question for post {positive.post_id}")
            for i in rng.choice(len(valid), size=k - len(chosen), replace=False):
                chosen.append(valid[int(i)])
        return chosen

    def sample(self, positives: Sequence[CandidatePair], ratio: float, rng: np.random.Generator) -> list[CandidatePair]:
        """About ``ratio`` negatives per positive, paired with the positive's post."""
        base = int(ratio)
        extra_total = int(round(ratio * len(positives))) - base * len(positives)
        extra = set(rng.choice(len(positives), size=extra_total, replace=False).tolist()) if extra_total > 0 else set()
        out = []
        for i, pos in enumerate(positives):
            k = base + (1 if i in extra else 0)
            for text in self._draw(pos, k, rng):
                out.append(CandidatePair(pos.post_id, pos.domain, pos.post_text, text, SAMPLED_NEGATIVE, NEGATIVE))
        return out


def build_seed(
    corpus: Sequence[PostRecord],
    cfg: RefineConfig,
    rng: np.random.Generator | None = None,
    sampler: NegativeSampler | None = None,
) -> LabeledSet:
    """Seed set D0: last-comment questions as positives plus sampled negatives."""
    if not corpus:
        raise ValueError("corpus is empty")
    positives = seed_positives(corpus)
    per_domain: dict[str, int] = {}
    for pair in positives:
        per_domain[pair.domain] = per_domain.get(pair.domain, 0) + 1
    for domain in sorted({r.domain for r in corpus}):
        if per_domain.get(domain, 0) < 2:
            raise DomainTooSmall(domain, f"{per_domain.get(domain, 0)} posts with a question-mark last comment")
    sampler = sampler or NegativeSampler.from_corpus(corpus)
    rng = rng if rng is not None else stage_rng(cfg.seed, "D0")
    negatives = sampler.sample(positives, cfg.negative_ratio, rng)
    seed = LabeledSet("D0", positives + negatives, stage_seed(cfg.seed, "D0"))
    seed.meta = {"positives": len(positives), "negatives": len(negatives)}
    return seed


# --- refinement -----------------------------------------------------------------


@dataclass
class StageRow:
    stage_name: str
    phase: str  # down, up or final
    positives: int
    negatives: int
    metrics: Metrics | None
    trained_on: str


@dataclass
class StageLedger:
    rows: list[StageRow] = field(default_factory=list)

    def add(self, row: StageRow) -> None:
        self.rows.append(row)

    def phase(self, phase: str) -> list[StageRow]:
        return [r for r in self.rows if r.phase == phase]

    def validate(self) -> None:
        counts = [r.positives for r in self.phase("down")]
        if any(b > a for a, b in zip(counts, counts[1:])):
            raise AssertionError(f"down-sampling positive counts increased: {counts}")

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(["stage", "positives", "negatives", "precision", "recall", "f1"])
            for r in self.rows:
                m = r.metrics
                cells = [f"{m.precision:.6f}", f"{m.recall:.6f}", f"{m.f1:.6f}"] if m else ["", "", ""]
                writer.writerow([r.stage_name, r.positives, r.negatives, *cells])


@dataclass
class StepResult:
    stage: LabeledSet
    metrics: Metrics | None
    model: PairScorerModel
    trace: list[float]


@dataclass
class RefinementResult:
    model: PairScorerModel
    s0: LabeledSet
    ledger: StageLedger
    stages: dict[str, LabeledSet]
    final_trace: list[float]


def _train_cfg(cfg: RefineConfig, stage_name: str) -> TrainConfig:
    return replace(cfg.train, seed=stage_seed(cfg.seed, f"train:{stage_name}"))


def _confirmed(model: PairScorerModel, labeled: LabeledSet, cfg: RefineConfig, train_cfg: TrainConfig) -> list[CandidatePair]:
    """Positives of ``labeled`` that the model also predicts positive, with confidence attached."""
    positives = labeled.positives()
    scores = score_pairs(model, positives, train_cfg) if positives else []
    return [p.with_confidence(s) for p, s in zip(positives, scores) if s >= cfg.threshold]


def _assemble(name: str, positives: list[CandidatePair], cfg: RefineConfig, sampler: NegativeSampler) -> LabeledSet:
    seed = stage_seed(cfg.seed, name)
    negatives = sampler.sample(positives, cfg.negative_ratio, np.random.default_rng(seed))
    return LabeledSet(name, positives + negatives, seed, {"positives": len(positives), "negatives": len(negatives)})


def down_sample_step(
    prev: LabeledSet,
    cfg: RefineConfig,
    test_set: Sequence[AnnotatedPair] | None,
    sampler: NegativeSampler | None = None,
    stage_name: str | None = None,
) -> StepResult:
    """Train on ``prev``; keep the most confident confirmed positives of ``prev``."""
    name = stage_name or _next_down_name(prev.stage_name)
    sampler = sampler or NegativeSampler.from_stage(prev)
    train_cfg = _train_cfg(cfg, name)
    model, trace = fit(prev, train_cfg)
    confirmed = confidence_order(_confirmed(model, prev, cfg, train_cfg))
    if not confirmed:
        raise CollapsedStage(name)
    kept = confirmed[: kept_count(len(confirmed), cfg.keep_fraction)]
    metrics = evaluate_classifier(model, test_set, cfg.threshold, train_cfg) if test_set else None
    stage = _assemble(name, kept, cfg, sampler)
    stage.meta["confirmed"] = len(confirmed)
    return StepResult(stage, metrics, model, trace)


def up_sample_step(
    train_set: LabeledSet,
    target: LabeledSet,
    cfg: RefineConfig,
    test_set: Sequence[AnnotatedPair] | None,
    sampler: NegativeSampler | None = None,
    stage_name: str | None = None,
) -> StepResult:
    """Train on ``train_set``; keep every confirmed positive of the larger ``target``."""
    name = stage_name or f"S{target.stage_name.lstrip('D')}"
    sampler = sampler or NegativeSampler.from_stage(target)
    train_cfg = _train_cfg(cfg, name)
    model, trace = fit(train_set, train_cfg)
    confirmed = sorted(_confirmed(model, target, cfg, train_cfg), key=lambda p: (p.post_id, p.question_text))
    if not confirmed:
        raise CollapsedStage(name)
    metrics = evaluate_classifier(model, test_set, cfg.threshold, train_cfg) if test_set else None
    stage = _assemble(name, confirmed, cfg, sampler)
    stage.meta["confirmed"] = len(confirmed)
    return StepResult(stage, metrics, model, trace)


def _next_down_name(name: str) -> str:
    return f"D{int(name.lstrip('D')) + 1}"


def run_refinement(
    seed_set: LabeledSet,
    cfg: RefineConfig,
    test_set: Sequence[AnnotatedPair] | None = None,
    sampler: NegativeSampler | None = None,
) -> RefinementResult:
    """Down-sample N times, up-sample N times, then train the final classifier on S0."""
    sampler = sampler or NegativeSampler.from_stage(seed_set)
    ledger = StageLedger()
    n = cfg.n_iterations
    down = [seed_set]
    stages: dict[str, LabeledSet] = {seed_set.stage_name: seed_set}
    for i in range(1, n + 1):
        step = down_sample_step(down[-1], cfg, test_set, sampler, stage_name=f"D{i}")
        down.append(step.stage)
        stages[step.stage.stage_name] = step.stage
        ledger.add(_row(step, "down", down[-2].stage_name))
        logger.info("D%d: %d positives kept", i, len(step.stage.positives()))

    deepest = down[n]
    current = deepest
    for i in range(n, 0, -1):
        train_set = current if cfg.upsample_train_on == UPSAMPLE_LATEST else deepest
        step = up_sample_step(train_set, down[i - 1], cfg, test_set, sampler, stage_name=f"S{i - 1}")
        current = step.stage
        stages[current.stage_name] = current
        ledger.add(_row(step, "up", train_set.stage_name))
        logger.info("S%d: %d positives admitted", i - 1, len(current.positives()))

    s0 = current
    train_cfg = _train_cfg(cfg, "final")
    model, trace = fit(s0, train_cfg)
    metrics = evaluate_classifier(model, test_set, cfg.threshold, train_cfg) if test_set else None
    ledger.add(StageRow("final", "final", len(s0.positives()), len(s0.negatives()), metrics, s0.stage_name))
    ledger.validate()
    return RefinementResult(model, s0, ledger, stages, trace)


def _row(step: StepResult, phase: str, trained_on: str) -> StageRow:
    st = step.stage
    return StageRow(st.stage_name, phase, len(st.positives()), len(st.negatives()), step.metrics, trained_on)


def classify_corpus(
    model: PairScorerModel,
    all_pairs: Iterable[CandidatePair],
    cfg: RefineConfig,
    answers: Mapping[tuple[str, int], list[str]],
    batch_size: int = 256,
) -> Iterator[ClarQRecord]:
    """Yield a record for every pair scored at or above the threshold, in input order."""
    batch: list[CandidatePair] = []

    def flush():
        scores = score_pairs(model, batch, cfg.train)
        for pair, s in zip(batch, scores):
            if s >= cfg.threshold:
                yield ClarQRecord(
                    pair.domain, pair.post_id, pair.post_text, pair.question_text, answers[(pair.domain, pair.post_id)], float(s)
                )

    for pair in all_pairs:
        batch.append(pair)
        if len(batch) >= batch_size:
            yield from flush()
            batch = []
    if batch:
        yield from flush()

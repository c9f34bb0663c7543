"""Stage datasets flowing through the bootstrap and their JSON-lines persistence.

A stage file is one header line followed by one pair per line::

    {"schema": "clarq.stage/1", "stage_name": "D0", "rng_seed": 7, "count": 2, ...}
    {"post_id": 3, "domain": "travel", ...}
    ...
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

from clarq.errors import SchemaError
from clarq.ingest import PostRecord

STAGE_SCHEMA = "clarq.stage/1"

LAST_COMMENT = "last_comment"
ANY_COMMENT = "any_comment"
SAMPLED_NEGATIVE = "sampled_negative"
SOURCES = (LAST_COMMENT, ANY_COMMENT, SAMPLED_NEGATIVE)

POSITIVE = "positive"
NEGATIVE = "negative"
LABELS = (POSITIVE, NEGATIVE)


@dataclass(frozen=True)
class CandidatePair:
    post_id: int
    domain: str
    post_text: str
    question_text: str
    source: str
    pseudo_label: str | None = None
    confidence: float | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.pseudo_label is not None and self.pseudo_label not in LABELS:
            raise ValueError(f"unknown label {self.pseudo_label!r}")
        if self.source == SAMPLED_NEGATIVE and self.pseudo_label != NEGATIVE:
            raise ValueError("sampled negatives must carry the negative label")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def key(self) -> tuple[int, str]:
        return (self.post_id, self.question_text)

    def with_confidence(self, confidence: float) -> "CandidatePair":
        return replace(self, confidence=float(confidence))

    def to_dict(self) -> dict:
        return {
            "post_id": self.post_id,
            "domain": self.domain,
            "post_text": self.post_text,
            "question_text": self.question_text,
            "source": self.source,
            "pseudo_label": self.pseudo_label,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidatePair":
        return cls(
            post_id=int(d["post_id"]),
            domain=d["domain"],
            post_text=d["post_text"],
            question_text=d["question_text"],
            source=d["source"],
            pseudo_label=d.get("pseudo_label"),
            confidence=d.get("confidence"),
        )


@dataclass
class LabeledSet:
    stage_name: str
    pairs: list[CandidatePair]
    rng_seed: int
    meta: dict = field(default_factory=dict)

    def positives(self) -> list[CandidatePair]:
        return [p for p in self.pairs if p.pseudo_label == POSITIVE]

    def negatives(self) -> list[CandidatePair]:
        return [p for p in self.pairs if p.pseudo_label == NEGATIVE]

    def positive_keys(self) -> set[tuple[int, str]]:
        return {p.key for p in self.pairs if p.pseudo_label == POSITIVE}

    @property
    def trainable(self) -> bool:
        labels = {p.pseudo_label for p in self.pairs}
        return POSITIVE in labels and NEGATIVE in labels

    def validate(self) -> None:
        seen = set()
        for pair in self.pairs:
            if pair.pseudo_label is None:
                raise ValueError(f"{self.stage_name}: unlabeled pair for post {pair.post_id}")
            triple = (pair.post_id, pair.question_text, pair.pseudo_label)
            if triple in seen:
                raise ValueError(f"{self.stage_name}: duplicate pair {triple}")
            seen.add(triple)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class ClarQRecord:
    domain: str
    post_id: int
    post_text: str
    question_text: str
    answers: list[str]
    confidence: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "domain": self.domain,
                "post_id": self.post_id,
                "post_text": self.post_text,
                "question_text": self.question_text,
                "answers": self.answers,
                "confidence": self.confidence,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "ClarQRecord":
        d = json.loads(line)
        return cls(
            domain=d["domain"],
            post_id=int(d["post_id"]),
            post_text=d["post_text"],
            question_text=d["question_text"],
            answers=list(d["answers"]),
            confidence=float(d["confidence"]),
        )


def write_stage(labeled: LabeledSet, path: str | os.PathLike) -> None:
    labeled.validate()
    header = {
        "schema": STAGE_SCHEMA,
        "stage_name": labeled.stage_name,
        "rng_seed": labeled.rng_seed,
        "count": len(labeled.pairs),
        "meta": labeled.meta,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, ensure_ascii=False, sort_keys=True))
        fh.write("\n")
        for pair in labeled.pairs:
            fh.write(json.dumps(pair.to_dict(), ensure_ascii=False))
            fh.write("\n")


def read_stage(path: str | os.PathLike) -> LabeledSet:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            raise SchemaError(f"{path}: empty stage file (no header)")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: unreadable header: {exc}") from exc
        if header.get("schema") != STAGE_SCHEMA:
            raise SchemaError(f"{path}: schema {header.get('schema')!r}, expected {STAGE_SCHEMA!r}")
        pairs = [CandidatePair.from_dict(json.loads(line)) for line in fh if line.strip()]
    if len(pairs) != header["count"]:
        raise SchemaError(f"{path}: header announces {header['count']} pairs, found {len(pairs)}")
    return LabeledSet(
        stage_name=header["stage_name"],
        pairs=pairs,
        rng_seed=int(header["rng_seed"]),
        meta=header.get("meta", {}),
    )


def candidate_pairs(records: Iterable[PostRecord]) -> Iterator[CandidatePair]:
    """Every (post, comment) tuple of the corpus, in record and comment order."""
    for record in records:
        last = len(record.comments) - 1
        for i, (text, _ts) in enumerate(record.comments):
            yield CandidatePair(
                post_id=record.post_id,
                domain=record.domain,
                post_text=record.post_text,
                question_text=text,
                source=LAST_COMMENT if i == last else ANY_COMMENT,
            )


def write_clarq(records: Iterable[ClarQRecord], path: str | os.PathLike) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record.to_json())
            fh.write("\n")
            count += 1
    return count


def read_clarq(path: str | os.PathLike) -> Iterator[ClarQRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield ClarQRecord.from_json(line)


def answers_index(records: Iterable[PostRecord]) -> dict[tuple[str, int], list[str]]:
    return {(r.domain, r.post_id): r.answers for r in records}


def post_text_index(records: Iterable[PostRecord]) -> dict[tuple[str, int], str]:
    return {(r.domain, r.post_id): r.post_text for r in records}


def stage_path(stage_dir: Path, stage_name: str) -> Path:
    return Path(stage_dir) / f"{stage_name}.jsonl"

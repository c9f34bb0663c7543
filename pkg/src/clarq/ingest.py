"""Parsing of stackexchange archive dumps into answered-post records.

Each domain directory holds a ``Posts.xml`` and a ``Comments.xml``, both a
single root element with ``<row .../>`` children. Parsing is streaming so a
domain never has to fit in memory as a DOM tree.
"""

from __future__ import annotations

import html
import json
import logging
import re
import xml.etree.ElementTree as ET
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

from clarq.errors import MalformedXml, MissingAttribute

logger = logging.getLogger(__name__)

XmlSource = Union[str, Path, IO[bytes]]

QUESTION = "question"
ANSWER = "answer"
_POST_TYPES = {"1": QUESTION, "2": ANSWER}

_BLOCK_TAGS = {"p", "br", "div", "li", "ul", "ol", "pre", "blockquote", "h1", "h2", "h3", "h4", "tr", "td", "hr"}
_WS = re.compile(r"\s+")


class _TextExtractor(HTMLParser):
    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in _BLOCK_TAGS:
            self.parts.append(" ")

    def handle_endtag(self, tag):
        if tag in _BLOCK_TAGS:
            self.parts.append(" ")

    def handle_data(self, data):
        self.parts.append(data)


def clean_text(raw: str) -> str:
    """Strip HTML tags, decode entities and collapse whitespace."""
    if not raw:
        return ""
    parser = _TextExtractor()
    parser.feed(raw)
    parser.close()
    text = html.unescape("".join(parser.parts))
    return _WS.sub(" ", text).strip()


def parse_timestamp(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat(timespec="milliseconds")


@dataclass(frozen=True)
class RawPostRow:
    id: int
    post_type: str
    parent_id: int | None
    accepted_answer_id: int | None
    title: str
    body: str
    creation: datetime
    domain: str


@dataclass(frozen=True)
class RawCommentRow:
    id: int
    post_id: int
    text: str
    creation: datetime


@dataclass(frozen=True)
class PostRecord:
    post_id: int
    domain: str
    title: str
    body: str
    answers: list[str]
    comments: list[tuple[str, str]]  # (text, ISO-8601 UTC timestamp), ascending

    @property
    def post_text(self) -> str:
        return f"{self.title} {self.body}".strip()

    def to_json(self) -> str:
        return json.dumps(
            {
                "post_id": self.post_id,
                "domain": self.domain,
                "title": self.title,
                "body": self.body,
                "answers": self.answers,
                "comments": [[text, ts] for text, ts in self.comments],
            },
            ensure_ascii=False,
            sort_keys=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "PostRecord":
        d = json.loads(line)
        return cls(
            post_id=int(d["post_id"]),
            domain=d["domain"],
            title=d["title"],
            body=d["body"],
            answers=list(d["answers"]),
            comments=[(text, ts) for text, ts in d["comments"]],
        )


@dataclass
class JoinReport:
    domain: str
    questions: int = 0
    answered: int = 0
    answers: int = 0
    comments_attached: int = 0
    comments_on_unanswered: int = 0
    comments_on_answers: int = 0
    orphan_comments: int = 0
    orphan_answers: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _iter_rows(source: XmlSource, root_tag: str) -> Iterator[tuple[int, dict[str, str]]]:
    try:
        context = ET.iterparse(source, events=("start", "end"))
        root = None
        index = 0
        for event, elem in context:
            if root is None:
                root = elem
                if elem.tag != root_tag:
                    raise MalformedXml(f"expected <{root_tag}> root element, found <{elem.tag}>")
                continue
            if event == "end" and elem.tag == "row":
                yield index, dict(elem.attrib)
                index += 1
                root.clear()
    except ET.ParseError as exc:
        line, column = exc.position
        raise MalformedXml(f"malformed <{root_tag}> file: {exc}", line, column) from exc


def _opt_int(value: str | None) -> int | None:
    return int(value) if value not in (None, "") else None


def _require(attrs: dict[str, str], name: str, index: int) -> str:
    value = attrs.get(name)
    if value is None:
        raise MissingAttribute(name, index)
    return value


def parse_posts(stream: XmlSource, domain: str) -> list[RawPostRow]:
    """Parse a ``Posts.xml`` stream, keeping question and answer rows only."""
    rows = []
    for index, attrs in _iter_rows(stream, "posts"):
        post_id = int(_require(attrs, "Id", index))
        post_type = _POST_TYPES.get(_require(attrs, "PostTypeId", index))
        if post_type is None:
            continue
        parent_id = _opt_int(attrs.get("ParentId"))
        if post_type == ANSWER and parent_id is None:
            raise MissingAttribute("ParentId", index)
        if post_type == QUESTION:
            parent_id = None
        rows.append(
            RawPostRow(
                id=post_id,
                post_type=post_type,
                parent_id=parent_id,
                accepted_answer_id=_opt_int(attrs.get("AcceptedAnswerId")),
                title=clean_text(attrs.get("Title", "")),
                body=clean_text(attrs.get("Body", "")),
                creation=parse_timestamp(_require(attrs, "CreationDate", index)),
                domain=domain,
            )
        )
    return rows


def parse_comments(stream: XmlSource) -> list[RawCommentRow]:
    """Parse a ``Comments.xml`` stream.

    Rows whose text is blank after cleaning carry no candidate question and
    are skipped.
    """
    rows = []
    for index, attrs in _iter_rows(stream, "comments"):
        comment_id = int(_require(attrs, "Id", index))
        post_id = int(_require(attrs, "PostId", index))
        text = clean_text(_require(attrs, "Text", index))
        if not text:
            logger.debug("skipping blank comment %d", comment_id)
            continue
        rows.append(
            RawCommentRow(
                id=comment_id,
                post_id=post_id,
                text=text,
                creation=parse_timestamp(_require(attrs, "CreationDate", index)),
            )
        )
    return rows


def join_corpus_report(
    posts: Iterable[RawPostRow], comments: Iterable[RawCommentRow], domain: str
) -> tuple[list[PostRecord], JoinReport]:
    report = JoinReport(domain=domain)
    questions: dict[int, RawPostRow] = {}
    answer_ids: set[int] = set()
    answers_by_question: dict[int, list[RawPostRow]] = defaultdict(list)
    for row in posts:
        if row.post_type == QUESTION:
            questions[row.id] = row
        else:
            answer_ids.add(row.id)
            answers_by_question[row.parent_id].append(row)
    report.questions = len(questions)

    for parent_id, answer_rows in answers_by_question.items():
        if parent_id not in questions:
            report.orphan_answers += len(answer_rows)
        else:
            report.answers += len(answer_rows)

    comments_by_post: dict[int, list[RawCommentRow]] = defaultdict(list)
    for comment in comments:
        target = questions.get(comment.post_id)
        if target is None:
            if comment.post_id in answer_ids:
                report.comments_on_answers += 1
            else:
                report.orphan_comments += 1
            continue
        if comment.post_id not in answers_by_question:
            report.comments_on_unanswered += 1
            continue
        comments_by_post[comment.post_id].append(comment)
        report.comments_attached += 1

    records = []
    for post_id in sorted(questions):
        answer_rows = answers_by_question.get(post_id)
        if not answer_rows:
            continue
        question = questions[post_id]
        answer_rows = sorted(answer_rows, key=lambda r: (r.creation, r.id))
        ordered = sorted(comments_by_post.get(post_id, []), key=lambda c: (c.creation, c.id))
        records.append(
            PostRecord(
                post_id=post_id,
                domain=domain,
                title=question.title,
                body=question.body,
                answers=[a.body for a in answer_rows],
                comments=[(c.text, format_timestamp(c.creation)) for c in ordered],
            )
        )
    report.answered = len(records)
    if report.orphan_comments:
        logger.warning("%s: dropped %d orphan comments", domain, report.orphan_comments)
    return records, report


def join_corpus(posts: Iterable[RawPostRow], comments: Iterable[RawCommentRow], domain: str) -> list[PostRecord]:
    """Join posts and comments into records for answered question posts."""
    records, _ = join_corpus_report(posts, comments, domain)
    return records


def ingest_domain(domain_dir: Path, domain: str | None = None) -> tuple[list[PostRecord], JoinReport]:
    domain = domain or domain_dir.name
    with open(domain_dir / "Posts.xml", "rb") as fh:
        posts = parse_posts(fh, domain)
    with open(domain_dir / "Comments.xml", "rb") as fh:
        comments = parse_comments(fh)
    return join_corpus_report(posts, comments, domain)


def discover_domains(dump_dir: Path) -> list[str]:
    return sorted(
        p.name for p in Path(dump_dir).iterdir() if p.is_dir() and (p / "Posts.xml").exists() and (p / "Comments.xml").exists()
    )


def write_records(records: Iterable[PostRecord], path: Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(record.to_json())
            fh.write("\n")
            count += 1
    return count


def read_records(path: Path) -> list[PostRecord]:
    with open(path, encoding="utf-8") as fh:
        return [PostRecord.from_json(line) for line in fh if line.strip()]

"""Generator for the bundled two-domain mini-dump fixture.

The output mimics the archive layout (one directory per domain with
``Posts.xml`` and ``Comments.xml``) and adds the awkward cases a real dump
contains: unanswered questions, tag-wiki rows, comments on answers, orphan
comments, HTML bodies, entity-encoded text, shuffled row order and equal
comment timestamps. It also writes an annotated test set and a pipeline
config. Run ``python -m clarq.minidump OUT_DIR`` to regenerate.
"""

from __future__ import annotations

import argparse
import csv
from datetime import datetime, timedelta
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from clarq.ingest import clean_text

TOPICS = {
    "cooking": [
        ("oven", "bake", "rack"), ("flour", "dough", "knead"), ("yeast", "proof", "rise"),
        ("knife", "sharpen", "blade"), ("pan", "sear", "skillet"), ("rice", "steam", "grain"),
        ("butter", "melt", "brown"), ("sauce", "simmer", "reduce"), ("egg", "whisk", "yolk"),
        ("steak", "grill", "marinade"), ("bread", "crust", "loaf"), ("soup", "stock", "broth"),
    ],
    "travel": [
        ("visa", "embassy", "apply"), ("passport", "renew", "expiry"), ("train", "ticket", "rail"),
        ("airport", "layover", "terminal"), ("luggage", "baggage", "carry"), ("hotel", "booking", "room"),
        ("bus", "route", "station"), ("flight", "airline", "delay"), ("border", "customs", "crossing"),
        ("car", "rental", "license"), ("ferry", "port", "crossing"), ("hostel", "dorm", "checkin"),
    ],
}
CLARIFYING = [
    "what kind of {t} are you using?",
    "which {t} do you have exactly?",
    "how old is the {t}?",
    "is the {t} new or used?",
    "did you already try a different {t}?",
    "what do you mean by {t} here?",
    "is the &quot;{t}&quot; the same one from your title?",
    "how long was the {t} involved before this happened?",
]
GENERIC = [
    "did you search the site before asking?",
    "why was this downvoted?",
    "is this a duplicate?",
    "can you accept an answer?",
    "who edited this?",
]
REMARKS = [
    "Try rebooting.",
    "Thanks, that helped.",
    "+1 same here",
    "See the <b>FAQ</b> for details.",
    "Welcome to the site!",
    "Good question.",
]
ANSWER_REMARKS = ["great answer, thanks", "this worked for me", "could you add a source?"]

BASE_TIME = datetime(2019, 1, 1, 8, 0, 0)


def _ts(t: datetime) -> str:
    return t.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t.microsecond // 1000:03d}"


def _row(attrs: dict[str, object]) -> str:
    body = " ".join(f"{k}={quoteattr(str(v), {chr(10): '&#10;'})}" for k, v in attrs.items() if v is not None)
    return f"  <row {body} />"


def _write_xml(path: Path, root: str, rows: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write('<?xml version="1.0" encoding="utf-8"?>\n')
        fh.write(f"<{root}>\n")
        for row in rows:
            fh.write(row + "\n")
        fh.write(f"</{root}>\n")


def generate_domain(domain: str, out_dir: Path, rng: np.random.Generator, n_questions: int, id_offset: int):
    """Write one domain; return gold labels for candidate test tuples."""
    topics = TOPICS[domain]
    posts: list[str] = []
    comments: list[dict] = []
    labeled: list[tuple[int, str, str, int]] = []  # (post_id, text, gold, position from end)
    next_id = id_offset
    next_comment = id_offset * 10

    def new_id():
        nonlocal next_id
        next_id += 1
        return next_id

    for q in range(n_questions):
        topic = topics[int(rng.integers(len(topics)))]
        qid = new_id()
        created = BASE_TIME + timedelta(days=q, minutes=int(rng.integers(0, 600)))
        answered = q % 7 != 3  # every seventh question stays unanswered
        answer_ids = [new_id() for _ in range(1 + int(rng.integers(0, 2)))] if answered else []
        title = f"Problem with my {topic[0]} when I {topic[1]}"
        body = (
            f"<p>I tried to {topic[1]} with the {topic[0]} &amp; it did not work.</p>"
            f"<p>Any tips on the <code>{topic[2]}</code>?</p>"
        )
        posts.append(
            _row(
                {
                    "Id": qid,
                    "PostTypeId": 1,
                    "AcceptedAnswerId": answer_ids[0] if answer_ids and q % 2 == 0 else None,
                    "CreationDate": _ts(created),
                    "Title": title,
                    "Body": body,
                }
            )
        )
        for k, aid in enumerate(answer_ids):
            extra = topic[2] if k == 0 else topic[int(rng.integers(3))]
            posts.append(
                _row(
                    {
                        "Id": aid,
                        "PostTypeId": 2,
                        "ParentId": qid,
                        "CreationDate": _ts(created + timedelta(hours=2 + k)),
                        "Body": f"<p>Use a better {topic[0]} and check the {extra}. Answer {aid}.</p>",
                    }
                )
            )
            if rng.random() < 0.3:
                next_comment += 1
                comments.append(
                    {"Id": next_comment, "PostId": aid, "Text": ANSWER_REMARKS[int(rng.integers(3))],
                     "CreationDate": _ts(created + timedelta(hours=3 + k))}
                )

        n_comments = int(rng.choice([0, 1, 2, 3, 4], p=[0.08, 0.2, 0.32, 0.25, 0.15]))
        kinds = []
        for i in range(n_comments):
            last = i == n_comments - 1
            roll = rng.random()
            if last:
                kind = "clar" if roll < 0.7 else ("generic" if roll < 0.8 else "remark")
            else:
                kind = "clar" if roll < 0.35 else ("generic" if roll < 0.45 else "remark")
            kinds.append(kind)
        used: set[str] = set()
        post_comments = []
        for i, kind in enumerate(kinds):
            while True:
                if kind == "clar":
                    text = CLARIFYING[int(rng.integers(len(CLARIFYING)))].format(t=topic[int(rng.integers(3))])
                elif kind == "generic":
                    text = GENERIC[int(rng.integers(len(GENERIC)))]
                else:
                    text = REMARKS[int(rng.integers(len(REMARKS)))]
                if text not in used:
                    used.add(text)
                    break
            stamp = created + timedelta(minutes=30 * (i + 1))
            post_comments.append([text, stamp, kind])
        if len(post_comments) >= 3 and q % 5 == 0:
            # equal timestamps: ordering must fall back to comment id
            post_comments[1][1] = post_comments[0][1]
        for i, (text, stamp, kind) in enumerate(post_comments):
            next_comment += 1
            comments.append({"Id": next_comment, "PostId": qid, "Text": text, "CreationDate": _ts(stamp)})
            if answered and len(post_comments) - i <= 3:
                gold = "positive" if kind == "clar" else "negative"
                labeled.append((qid, clean_text(text), gold, len(post_comments) - i))
        if q % 9 == 4:
            wiki = new_id()
            posts.append(_row({"Id": wiki, "PostTypeId": 4, "CreationDate": _ts(created), "Body": "<p>tag excerpt</p>"}))

    for k in range(3):
        next_comment += 1
        comments.append(
            {"Id": next_comment, "PostId": id_offset + 9000 + k, "Text": "comment on a deleted post?",
             "CreationDate": _ts(BASE_TIME + timedelta(days=k))}
        )

    order = rng.permutation(len(comments))
    comment_rows = [_row(comments[int(i)]) for i in order]
    domain_dir = out_dir / domain
    domain_dir.mkdir(parents=True, exist_ok=True)
    _write_xml(domain_dir / "Posts.xml", "posts", posts)
    _write_xml(domain_dir / "Comments.xml", "comments", comment_rows)
    return labeled


def _pick_test(labeled, rng: np.random.Generator, n_pos: int, n_neg: int):
    pos = [x for x in labeled if x[2] == "positive"]
    neg = [x for x in labeled if x[2] == "negative"]
    chosen = [pos[int(i)] for i in rng.choice(len(pos), n_pos, replace=False)]
    chosen += [neg[int(i)] for i in rng.choice(len(neg), n_neg, replace=False)]
    return sorted(chosen, key=lambda x: (x[0], x[1]))


CONFIG_TEMPLATE = """\
# Pipeline config for the bundled mini-dump.
dump_dir: dump
work_dir: work
test_set: test_set.csv
domains: []
seed: 2020
train:
  epochs: 30
  batch_size: 16
  learning_rate: 0.5
  max_post_len: 300
  max_question_len: 60
  d_e: 16
  d_h: 16
  d_f: 16
refine:
  n_iterations: 3
  keep_fraction: 0.4
  negative_ratio: 1.0
  threshold: 0.5
rerank:
  domains: [cooking, travel]
  n_per_domain: 20
  pool_size: 50
  scorer: tfidf
"""


def generate_minidump(out_dir: str | Path, seed: int = 2020, questions_per_domain: int = 100) -> Path:
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    test_rows = []
    for offset, domain in enumerate(sorted(TOPICS)):
        labeled = generate_domain(domain, out_dir / "dump", rng, questions_per_domain, id_offset=(offset + 1) * 100000)
        for post_id, text, gold, _pos in _pick_test(labeled, rng, n_pos=21, n_neg=9):
            test_rows.append((domain, post_id, text, gold))
    with open(out_dir / "test_set.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["domain", "post_id", "question_text", "gold_label"])
        writer.writerows(test_rows)
    (out_dir / "config.yaml").write_text(CONFIG_TEMPLATE, encoding="utf-8")
    return out_dir


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write the synthetic two-domain mini-dump fixture.")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=2020)
    parser.add_argument("--questions", type=int, default=100, help="questions per domain")
    args = parser.parse_args(argv)
    generate_minidump(args.out_dir, args.seed, args.questions)


if __name__ == "__main__":
    main()

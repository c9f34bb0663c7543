"""Stage commands over a work directory, with manifests and config hashing.

Work directory layout::

    corpus/<domain>.jsonl     answered-post records
    stages/<name>.jsonl       D0..DN, S(N-1)..S0
    model/final.json          classifier trained on S0
    ledger.csv                per-stage counts and test-set metrics
    clarq.jsonl               final dataset
    eval_{down,up,final}.csv  classifier metrics tables
    rerank.csv                P@k / MRR with and without the clarification question
    stats.csv, stats.svg      domain distribution
    manifests/<stage>.json    provenance of each stage
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml
from filelock import FileLock, Timeout

from clarq import corpus as corpus_io
from clarq.encoder import TrainConfig, load_model, save_model
from clarq.errors import ClarqError, ConfigError, ConfigMismatch, MissingArtifact
from clarq.evaluation import (
    DualEncoderScorer,
    Metrics,
    TfidfScorer,
    build_rerank_instances,
    evaluate_classifier,
    load_annotated,
    rerank_report,
    write_metrics_csv,
    write_rerank_csv,
)
from clarq.ingest import discover_domains, ingest_domain, read_records, write_records
from clarq.refine import NegativeSampler, RefineConfig, build_seed, classify_corpus, run_refinement, stage_rng
from clarq.stats import domain_distribution, write_stats_csv, write_svg

logger = logging.getLogger(__name__)

STAGES = ("ingest", "seed", "refine", "classify", "eval", "rerank", "stats")
# what each stage needs, nearest first, and the artifact name reported when it is missing
PREREQUISITES = {
    "seed": [("ingest", "corpus")],
    "refine": [("seed", "D0"), ("ingest", "corpus")],
    "classify": [("refine", "model"), ("ingest", "corpus")],
    "eval": [("refine", "model"), ("ingest", "corpus")],
    "rerank": [("classify", "clarq.jsonl"), ("ingest", "corpus")],
    "stats": [("classify", "clarq.jsonl")],
}


@dataclass(frozen=True)
class RerankSettings:
    domains: tuple[str, ...] = ()
    n_per_domain: int = 1000
    pool_size: int = 100
    scorer: str = "tfidf"


@dataclass(frozen=True)
class PipelineConfig:
    dump_dir: Path
    work_dir: Path
    domains: tuple[str, ...] = ()
    seed: int = 0
    test_set: Path | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    rerank: RerankSettings = field(default_factory=RerankSettings)
    workers: int = 1

    def hash_payload(self) -> dict:
        """Everything that influences artifact contents; paths are replaced by content."""
        refine = asdict(self.refine)
        refine.pop("train")
        return {
            "domains": list(self.domains),
            "seed": self.seed,
            "test_set_sha256": sha256_file(self.test_set) if self.test_set else None,
            "train": self.train.to_dict(),
            "refine": refine,
            "rerank": {**asdict(self.rerank), "domains": list(self.rerank.domains)},
        }

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.hash_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config(path: str | os.PathLike, seed: int | None = None, domains: list[str] | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    base = path.parent

    def resolve(value):
        p = Path(value)
        return p if p.is_absolute() else (base / p)

    if "dump_dir" not in raw:
        raise ConfigError("config needs dump_dir")
    dump_dir = resolve(raw["dump_dir"])
    work_env = os.environ.get("CLARQ_WORKDIR")
    work_dir = Path(work_env) if work_env else resolve(raw.get("work_dir", "work"))
    master_seed = int(seed if seed is not None else raw.get("seed", 0))
    try:
        train = TrainConfig(**{**(raw.get("train") or {}), "seed": master_seed})
        refine = RefineConfig(**{**(raw.get("refine") or {}), "seed": master_seed, "train": train})
        rr = raw.get("rerank") or {}
        rerank = RerankSettings(**{**rr, "domains": tuple(rr.get("domains", ()))})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    test_set = resolve(raw["test_set"]) if raw.get("test_set") else None
    cfg = PipelineConfig(
        dump_dir=dump_dir,
        work_dir=work_dir,
        domains=tuple(domains if domains is not None else raw.get("domains") or ()),
        seed=master_seed,
        test_set=test_set,
        train=train,
        refine=refine,
        rerank=rerank,
        workers=int(raw.get("workers", 1)),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    if not cfg.dump_dir.is_dir():
        raise ConfigError(f"dump_dir {cfg.dump_dir} does not exist")
    if cfg.test_set is not None and not cfg.test_set.is_file():
        raise ConfigError(f"test_set {cfg.test_set} does not exist")
    available = discover_domains(cfg.dump_dir)
    unknown = sorted(set(cfg.domains) - set(available))
    if unknown:
        raise ConfigError(f"domains not found in {cfg.dump_dir}: {unknown}")


class Workspace:
    def __init__(self, cfg: PipelineConfig, allow_mixed: bool = False):
        self.cfg = cfg
        self.root = cfg.work_dir
        self.allow_mixed = allow_mixed

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def rel(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()

    def manifest_path(self, stage: str) -> Path:
        return self.path("manifests", f"{stage}.json")

    def read_manifest(self, stage: str) -> dict | None:
        p = self.manifest_path(stage)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def require(self, stage: str) -> None:
        for needed, artifact in PREREQUISITES.get(stage, []):
            manifest = self.read_manifest(needed)
            if manifest is None:
                raise MissingArtifact(artifact, str(self.manifest_path(needed)))
            for rel in manifest.get("outputs", {}):
                if not self.path(rel).exists():
                    raise MissingArtifact(artifact, str(self.path(rel)))
            if manifest["config_hash"] != self.cfg.config_hash and not self.allow_mixed:
                raise ConfigMismatch(
                    f"{needed} artifacts were produced by config {manifest['config_hash']}, "
                    f"current config is {self.cfg.config_hash} (pass --allow-mixed to override)"
                )

    def write_manifest(self, stage: str, inputs: dict[str, str], outputs: list[Path], counts: dict, started: float) -> dict:
        manifest = {
            "stage": stage,
            "inputs": inputs,
            "outputs": {self.rel(p): sha256_file(p) for p in outputs},
            "config_hash": self.cfg.config_hash,
            "seed": self.cfg.seed,
            "counts": counts,
            "wall_time": round(time.monotonic() - started, 3),
        }
        p = self.manifest_path(stage)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return manifest

    def inputs_of(self, *stages: str) -> dict[str, str]:
        out = {}
        for stage in stages:
            manifest = self.read_manifest(stage) or {}
            out.update(manifest.get("outputs", {}))
        return out

    def corpus_domains(self) -> list[str]:
        manifest = self.read_manifest("ingest")
        return list(manifest["counts"]["domains"]) if manifest else []

    def load_corpus(self) -> list:
        records = []
        for domain in self.corpus_domains():
            records.extend(read_records(self.path("corpus", f"{domain}.jsonl")))
        return records

    def test_set(self, records) -> list | None:
        if self.cfg.test_set is None:
            return None
        return load_annotated(self.cfg.test_set, corpus_io.post_text_index(records))


def _ingest_one(args):
    dump_dir, domain = args
    return domain, ingest_domain(Path(dump_dir) / domain, domain)


def cmd_ingest(ws: Workspace) -> dict:
    started = time.monotonic()
    cfg = ws.cfg
    domains = list(cfg.domains) or discover_domains(cfg.dump_dir)
    if not domains:
        raise ConfigError(f"no domain directories under {cfg.dump_dir}")
    jobs = [(str(cfg.dump_dir), d) for d in domains]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_ingest_one, jobs))
    else:
        results = [_ingest_one(job) for job in jobs]
    ws.path("corpus").mkdir(parents=True, exist_ok=True)
    outputs, reports, inputs = [], {}, {}
    for domain, (records, report) in results:
        out = ws.path("corpus", f"{domain}.jsonl")
        write_records(records, out)
        outputs.append(out)
        reports[domain] = report.as_dict()
        for name in ("Posts.xml", "Comments.xml"):
            inputs[f"dump:{domain}/{name}"] = sha256_file(cfg.dump_dir / domain / name)
    counts = {"domains": domains, "per_domain": reports}
    return ws.write_manifest("ingest", inputs, outputs, counts, started)


def cmd_seed(ws: Workspace) -> dict:
    ws.require("seed")
    started = time.monotonic()
    records = ws.load_corpus()
    cfg = ws.cfg.refine
    seed_set = build_seed(records, cfg, stage_rng(cfg.seed, "D0"), NegativeSampler.from_corpus(records))
    ws.path("stages").mkdir(parents=True, exist_ok=True)
    out = corpus_io.stage_path(ws.path("stages"), "D0")
    corpus_io.write_stage(seed_set, out)
    counts = {"positives": len(seed_set.positives()), "negatives": len(seed_set.negatives())}
    return ws.write_manifest("seed", ws.inputs_of("ingest"), [out], counts, started)


def cmd_refine(ws: Workspace) -> dict:
    ws.require("refine")
    started = time.monotonic()
    records = ws.load_corpus()
    seed_set = corpus_io.read_stage(corpus_io.stage_path(ws.path("stages"), "D0"))
    result = run_refinement(seed_set, ws.cfg.refine, ws.test_set(records), NegativeSampler.from_corpus(records))
    outputs = []
    for name, stage in result.stages.items():
        if name == "D0":
            continue
        out = corpus_io.stage_path(ws.path("stages"), name)
        corpus_io.write_stage(stage, out)
        outputs.append(out)
    ledger_path = ws.path("ledger.csv")
    result.ledger.to_csv(ledger_path)
    ws.path("model").mkdir(parents=True, exist_ok=True)
    model_path = ws.path("model", "final.json")
    save_model(result.model, model_path, ws.cfg.train.to_dict())
    outputs += [ledger_path, model_path]
    counts = {r.stage_name: {"positives": r.positives, "negatives": r.negatives} for r in result.ledger.rows}
    return ws.write_manifest("refine", ws.inputs_of("seed"), sorted(outputs), counts, started)


def cmd_classify(ws: Workspace) -> dict:
    ws.require("classify")
    started = time.monotonic()
    records = ws.load_corpus()
    model, _ = load_model(ws.path("model", "final.json"))
    pairs = corpus_io.candidate_pairs(records)
    answers = corpus_io.answers_index(records)
    out = ws.path("clarq.jsonl")
    n = corpus_io.write_clarq(classify_corpus(model, pairs, ws.cfg.refine, answers), out)
    per_domain: dict[str, int] = {}
    for r in corpus_io.read_clarq(out):
        per_domain[r.domain] = per_domain.get(r.domain, 0) + 1
    counts = {"candidates": sum(len(r.comments) for r in records), "classified_positive": n, "per_domain": per_domain}
    return ws.write_manifest("classify", ws.inputs_of("ingest", "refine"), [out], counts, started)


def _read_ledger(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _row_metrics(row: dict) -> Metrics:
    return Metrics(float(row["precision"]), float(row["recall"]), float(row["f1"]))


def cmd_eval(ws: Workspace) -> dict:
    ws.require("eval")
    if ws.cfg.test_set is None:
        raise ConfigError("eval needs test_set in the config")
    started = time.monotonic()
    records = ws.load_corpus()
    test = ws.test_set(records)
    model, _ = load_model(ws.path("model", "final.json"))
    final = evaluate_classifier(model, test, ws.cfg.refine.threshold, ws.cfg.train)
    rows = _read_ledger(ws.path("ledger.csv"))
    down = [r for r in rows if r["stage"].startswith("D") and r["precision"]]
    up = [r for r in rows if r["stage"].startswith("S") and r["precision"]]
    outputs = [ws.path("eval_down.csv"), ws.path("eval_up.csv"), ws.path("eval_final.csv")]
    write_metrics_csv([(i, _row_metrics(r)) for i, r in enumerate(down, 1)], outputs[0])
    write_metrics_csv([(i, _row_metrics(r)) for i, r in enumerate(up, 1)], outputs[1])
    write_metrics_csv([(1, final)], outputs[2])
    counts = {"test_pairs": len(test), "final": {"precision": final.precision, "recall": final.recall, "f1": final.f1}}
    inputs = {**ws.inputs_of("refine"), "test_set": sha256_file(ws.cfg.test_set)}
    return ws.write_manifest("eval", inputs, outputs, counts, started)


def cmd_rerank(ws: Workspace) -> dict:
    ws.require("rerank")
    started = time.monotonic()
    settings = ws.cfg.rerank
    records = ws.load_corpus()
    domains = list(settings.domains) or ws.corpus_domains()
    questions: dict[tuple[str, int], tuple[float, str]] = {}
    for r in corpus_io.read_clarq(ws.path("clarq.jsonl")):
        key = (r.domain, r.post_id)
        # most confident question per post, ties to the lexicographically first text
        best = questions.get(key)
        if best is None or (-r.confidence, r.question_text) < (-best[0], best[1]):
            questions[key] = (r.confidence, r.question_text)
    cq = {k: v[1] for k, v in questions.items()}
    rng = stage_rng(ws.cfg.seed, "rerank")
    instances = build_rerank_instances(records, domains, settings.n_per_domain, settings.pool_size, rng, cq)
    in_scope = [r for r in records if r.domain in set(domains)]
    if settings.scorer == "tfidf":
        scorer = TfidfScorer(a for r in in_scope for a in r.answers)
    elif settings.scorer == "dual_encoder":
        scorer = DualEncoderScorer.fit(in_scope, ws.cfg.train, seed=ws.cfg.seed)
    else:
        raise ConfigError(f"unknown scorer {settings.scorer!r}")
    without = rerank_report(instances, scorer, use_cq=False)
    with_cq = rerank_report(instances, scorer, use_cq=True)
    out = ws.path("rerank.csv")
    write_rerank_csv(without, with_cq, out)
    counts = {"instances": len(instances), "mrr_without_cq": without.mrr, "mrr_with_cq": with_cq.mrr}
    return ws.write_manifest("rerank", ws.inputs_of("ingest", "classify"), [out], counts, started)


def cmd_stats(ws: Workspace) -> dict:
    ws.require("stats")
    started = time.monotonic()
    stats = domain_distribution(corpus_io.read_clarq(ws.path("clarq.jsonl")))
    outputs = [ws.path("stats.csv"), ws.path("stats.svg")]
    write_stats_csv(stats, outputs[0])
    write_svg(stats, outputs[1])
    counts = {"total": stats.total, "domains": len(stats.counts), "top20_share": stats.top_k_share(20)}
    return ws.write_manifest("stats", ws.inputs_of("classify"), outputs, counts, started)


COMMANDS = {
    "ingest": cmd_ingest,
    "seed": cmd_seed,
    "refine": cmd_refine,
    "classify": cmd_classify,
    "eval": cmd_eval,
    "rerank": cmd_rerank,
    "stats": cmd_stats,
}


def run_stage(cfg: PipelineConfig, stage: str, allow_mixed: bool = False) -> dict:
    """Run one stage under the work-directory lock."""
    ws = Workspace(cfg, allow_mixed)
    cfg.work_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(cfg.work_dir / ".clarq.lock"), timeout=0)
    try:
        with lock:
            return COMMANDS[stage](ws)
    except Timeout as exc:
        raise ClarqError(f"work dir {cfg.work_dir} is in use by another pipeline") from exc


def run_all(cfg: PipelineConfig, allow_mixed: bool = False) -> list[dict]:
    stages = [s for s in STAGES if s != "eval" or cfg.test_set is not None]
    return [run_stage(cfg, s, allow_mixed) for s in stages]

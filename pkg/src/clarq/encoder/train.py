from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from clarq.corpus import POSITIVE, CandidatePair, LabeledSet
from clarq.encoder.model import PARAM_NAMES, PairScorerModel, backward, cross_entropy, forward, pad_batch, predict_proba
from clarq.encoder.vocab import Vocabulary, tokenize
from clarq.errors import DegenerateSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.05
    seed: int = 0
    max_post_len: int = 300
    max_question_len: int = 60
    d_e: int = 64
    d_h: int = 128
    d_f: int = 64
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "learning_rate", "max_post_len", "max_question_len", "d_e", "d_h", "d_f"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def encode_pairs(pairs: Iterable[CandidatePair], vocab: Vocabulary, cfg: TrainConfig):
    posts, questions = [], []
    for pair in pairs:
        posts.append(tokenize(pair.post_text, vocab, cfg.max_post_len))
        questions.append(tokenize(pair.question_text, vocab, cfg.max_question_len))
    return posts, questions


def _labels(pairs: Sequence[CandidatePair]) -> np.ndarray:
    return np.array([1 if p.pseudo_label == POSITIVE else 0 for p in pairs], dtype=np.int64)


def _clip(grads: dict[str, np.ndarray], max_norm: float | None) -> None:
    if max_norm is None:
        return
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale


def train(model: PairScorerModel, labeled: LabeledSet, cfg: TrainConfig) -> tuple[PairScorerModel, list[float]]:
    """Mini-batch SGD on 2-class cross-entropy.

    Returns a trained copy and the mean training loss of each epoch; the
    input model is left untouched.
    """
    pairs = list(labeled.pairs)
    labels = _labels(pairs)
    if labels.min(initial=1) == labels.max(initial=0) or len(pairs) == 0:
        raise DegenerateSet(f"{labeled.stage_name}: training needs both positive and negative pairs")
    model = model.copy()
    posts, questions = encode_pairs(pairs, model.vocab, cfg)
    rng = np.random.default_rng(cfg.seed)
    trace: list[float] = []
    n = len(pairs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            post_ids, post_len = pad_batch([posts[i] for i in idx])
            q_ids, q_len = pad_batch([questions[i] for i in idx])
            y = labels[idx]
            probs, cache = forward(model, post_ids, post_len, q_ids, q_len)
            total += cross_entropy(probs, y) * len(idx)
            grads = backward(model, probs, y, cache)
            _clip(grads, cfg.clip_norm)
            for name in PARAM_NAMES:
                model.params[name] -= cfg.learning_rate * grads[name]
        trace.append(total / n)
        logger.debug("%s epoch %d loss %.5f", labeled.stage_name, epoch + 1, trace[-1])
    return model, trace


def fit(labeled: LabeledSet, cfg: TrainConfig) -> tuple[PairScorerModel, list[float]]:
    """Fresh vocabulary and model built from ``labeled``, then trained."""
    texts = [t for p in labeled.pairs for t in (p.post_text, p.question_text)]
    vocab = Vocabulary.build(texts)
    model = PairScorerModel.initialize(vocab, cfg.d_e, cfg.d_h, cfg.d_f, cfg.seed)
    return train(model, labeled, cfg)


def score_pairs(model: PairScorerModel, pairs: Sequence[CandidatePair], cfg: TrainConfig, batch_size: int = 256) -> np.ndarray:
    """prob_positive for every pair, in input order."""
    out = np.empty(len(pairs), dtype=np.float64)
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        posts, questions = encode_pairs(chunk, model.vocab, cfg)
        out[start : start + len(chunk)] = predict_proba(model, posts, questions)[:, 1]
    return out


def loss_and_grads(model: PairScorerModel, post_ids, q_ids, label: int):
    pi, pl = pad_batch([post_ids])
    qi, ql = pad_batch([q_ids])
    y = np.array([label])
    probs, cache = forward(model, pi, pl, qi, ql)
    return cross_entropy(probs, y), backward(model, probs, y, cache)


def _loss(model, post_ids, q_ids, label) -> float:
    pi, pl = pad_batch([post_ids])
    qi, ql = pad_batch([q_ids])
    probs, _ = forward(model, pi, pl, qi, ql, keep_cache=False)
    return cross_entropy(probs, np.array([label]))


def gradient_samples(model, pair, epsilon: float, n_params: int = 50, seed: int = 0):
    """Analytic and central-difference gradients at sampled coordinates.

    Embedding coordinates are drawn only from rows of tokens in the pair;
    all other rows have an exactly zero gradient.
    """
    post_ids, q_ids, label = pair
    _, grads = loss_and_grads(model, post_ids, q_ids, label)
    used_rows = sorted(set(post_ids) | set(q_ids))
    coords = []
    for name in PARAM_NAMES:
        value = model.params[name]
        if name == "emb":
            coords.extend((name, (r, c)) for r in used_rows for c in range(value.shape[1]))
        else:
            coords.extend((name, idx) for idx in np.ndindex(value.shape))
    rng = np.random.default_rng(seed)
    take = rng.choice(len(coords), size=min(n_params, len(coords)), replace=False)
    probe = model.copy()
    analytic, numeric = [], []
    for k in sorted(take):
        name, idx = coords[k]
        param = probe.params[name]
        original = param[idx]
        param[idx] = original + epsilon
        up = _loss(probe, post_ids, q_ids, label)
        param[idx] = original - epsilon
        down = _loss(probe, post_ids, q_ids, label)
        param[idx] = original
        numeric.append((up - down) / (2.0 * epsilon))
        analytic.append(grads[name][idx])
    return np.array(analytic), np.array(numeric)


def grad_check(model, pair, epsilon: float = 1e-5, n_params: int = 50, seed: int = 0, floor: float = 1e-6) -> float:
    """Max relative error ``|a - n| / max(|a|, |n|, floor)`` over sampled coordinates.

    ``pair`` is ``(post_ids, question_ids, label)``. ``floor`` keeps
    coordinates whose true gradient is ~0 from dividing round-off noise by
    round-off noise.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    analytic, numeric = gradient_samples(model, pair, epsilon, n_params, seed)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))

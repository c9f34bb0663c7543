"""Dual LSTM encoder with a product-fusion dense head, forward and backward.

Shapes, with ``B`` the batch size, ``T`` the padded sequence length,
``E`` the embedding size, ``H`` the LSTM hidden size and ``F`` the dense
hidden size:

    emb            (V, E)
    {P,Q}_Wx       (E, 4H)   gate order: input, forget, output, candidate
    {P,Q}_Wh       (H, 4H)
    {P,Q}_b        (4H,)
    W1, b1         (H, F), (F,)
    W2, b2         (F, 2), (2,)   column 0 = negative, column 1 = positive

The post sequence goes through the ``P`` encoder and the question through
the ``Q`` encoder; their final hidden states are multiplied element-wise,
passed through ``tanh(x @ W1 + b1)`` and then a 2-way softmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from clarq.encoder.vocab import PAD_ID, Vocabulary
from clarq.errors import EmptySequence

PARAM_NAMES = ("emb", "P_Wx", "P_Wh", "P_b", "Q_Wx", "Q_Wh", "Q_b", "W1", "b1", "W2", "b2")
DTYPE = np.float64


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class PairScorerModel:
    vocab: Vocabulary
    params: dict[str, np.ndarray]

    @property
    def d_e(self) -> int:
        return self.params["emb"].shape[1]

    @property
    def d_h(self) -> int:
        return self.params["P_Wh"].shape[0]

    @property
    def d_f(self) -> int:
        return self.params["W1"].shape[1]

    @classmethod
    def initialize(cls, vocab: Vocabulary, d_e: int, d_h: int, d_f: int, seed: int) -> "PairScorerModel":
        rng = np.random.default_rng(seed)

        def uniform(shape, scale):
            return rng.uniform(-scale, scale, size=shape).astype(DTYPE)

        params = {"emb": rng.normal(0.0, 1.0, size=(len(vocab), d_e)).astype(DTYPE)}
        params["emb"][PAD_ID] = 0.0
        for side in ("P", "Q"):
            params[f"{side}_Wx"] = uniform((d_e, 4 * d_h), np.sqrt(6.0 / (d_e + d_h)))
            params[f"{side}_Wh"] = uniform((d_h, 4 * d_h), np.sqrt(6.0 / (2 * d_h)))
            bias = np.zeros(4 * d_h, dtype=DTYPE)
            bias[d_h : 2 * d_h] = 1.0  # forget gate
            params[f"{side}_b"] = bias
        params["W1"] = uniform((d_h, d_f), np.sqrt(6.0 / (d_h + d_f)))
        params["b1"] = np.zeros(d_f, dtype=DTYPE)
        params["W2"] = uniform((d_f, 2), np.sqrt(6.0 / (d_f + 2)))
        params["b2"] = np.zeros(2, dtype=DTYPE)
        return cls(vocab, params)

    def copy(self) -> "PairScorerModel":
        return PairScorerModel(self.vocab, {k: v.copy() for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    if any(len(s) == 0 for s in seqs):
        raise EmptySequence("cannot encode an empty id sequence")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    ids = np.full((len(seqs), int(lengths.max())), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(seqs):
        ids[row, : len(seq)] = seq
    return ids, lengths


def lstm_forward(params, side: str, ids: np.ndarray, lengths: np.ndarray, keep_cache: bool = True):
    """Run one encoder over a padded batch; returns final hidden states.

    Padded positions leave ``h`` and ``c`` unchanged, so each row's output is
    the state after its own last real token.
    """
    Wx, Wh, b = params[f"{side}_Wx"], params[f"{side}_Wh"], params[f"{side}_b"]
    emb = params["emb"]
    B, T = ids.shape
    H = Wh.shape[0]
    h = np.zeros((B, H), dtype=DTYPE)
    c = np.zeros((B, H), dtype=DTYPE)
    cache = []
    for t in range(T):
        x = emb[ids[:, t]]
        z = x @ Wx + h @ Wh + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        o = sigmoid(z[:, 2 * H : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = (t < lengths)[:, None].astype(DTYPE)
        if keep_cache:
            cache.append((x, h, c, i, f, o, g, tc, m))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return h, cache


def lstm_backward(params, side: str, ids: np.ndarray, cache, dh: np.ndarray, grads: dict[str, np.ndarray]) -> None:
    Wx, Wh = params[f"{side}_Wx"], params[f"{side}_Wh"]
    dWx, dWh, db = grads[f"{side}_Wx"], grads[f"{side}_Wh"], grads[f"{side}_b"]
    demb = grads["emb"]
    dc = np.zeros_like(dh)
    for t in range(len(cache) - 1, -1, -1):
        x, h_prev, c_prev, i, f, o, g, tc, m = cache[t]
        keep = 1.0 - m
        dh_new = m * dh
        dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [
                dc_new * g * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dh_new * tc * o * (1.0 - o),
                dc_new * i * (1.0 - g * g),
            ],
            axis=1,
        )
        dWx += x.T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        np.add.at(demb, ids[:, t], dz @ Wx.T)
        dh = dz @ Wh.T + keep * dh
        dc = dc_new * f + keep * dc


def forward(model: PairScorerModel, post_ids, post_len, q_ids, q_len, keep_cache: bool = True):
    p = model.params
    hp, cache_p = lstm_forward(p, "P", post_ids, post_len, keep_cache)
    hq, cache_q = lstm_forward(p, "Q", q_ids, q_len, keep_cache)
    fused = hp * hq
    z1 = np.tanh(fused @ p["W1"] + p["b1"])
    logits = z1 @ p["W2"] + p["b2"]
    probs = softmax(logits)
    cache = (post_ids, q_ids, cache_p, cache_q, hp, hq, fused, z1)
    return probs, cache


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def backward(model: PairScorerModel, probs: np.ndarray, labels: np.ndarray, cache) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy over the batch."""
    p = model.params
    post_ids, q_ids, cache_p, cache_q, hp, hq, fused, z1 = cache
    grads = {name: np.zeros_like(value) for name, value in p.items()}
    B = len(labels)
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    dlogits /= B
    grads["W2"] = z1.T @ dlogits
    grads["b2"] = dlogits.sum(axis=0)
    da1 = (dlogits @ p["W2"].T) * (1.0 - z1 * z1)
    grads["W1"] = fused.T @ da1
    grads["b1"] = da1.sum(axis=0)
    dfused = da1 @ p["W1"].T
    lstm_backward(p, "P", post_ids, cache_p, dfused * hq, grads)
    lstm_backward(p, "Q", q_ids, cache_q, dfused * hp, grads)
    return grads


def encode(model: PairScorerModel, ids: Sequence[int], which: str) -> np.ndarray:
    """Final hidden state of the ``P`` (post) or ``Q`` (question) encoder."""
    if which not in ("P", "Q"):
        raise ValueError("which must be 'P' or 'Q'")
    batch, lengths = pad_batch([ids])
    h, _ = lstm_forward(model.params, which, batch, lengths, keep_cache=False)
    return h[0]


def predict_proba(model: PairScorerModel, post_seqs, q_seqs) -> np.ndarray:
    """Class probabilities, shape (B, 2), for aligned lists of id sequences."""
    post_ids, post_len = pad_batch(post_seqs)
    q_ids, q_len = pad_batch(q_seqs)
    probs, _ = forward(model, post_ids, post_len, q_ids, q_len, keep_cache=False)
    return probs


def score_pair(model: PairScorerModel, post_ids: Sequence[int], q_ids: Sequence[int]) -> tuple[float, float]:
    """``(prob_negative, prob_positive)`` for one pair."""
    probs = predict_proba(model, [post_ids], [q_ids])[0]
    return float(probs[0]), float(probs[1])

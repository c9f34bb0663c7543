"""JSON tensor dump of a trained pair scorer.

Layout (``format`` = ``clarq.model/1``)::

    {
      "format": "clarq.model/1",
      "dims": {"d_e": .., "d_h": .., "d_f": ..},
      "vocab": ["<pad>", "<unk>", "token", ...],     # index = id
      "params": {"emb": {"shape": [V, E], "data": [...row-major floats...]}, ...},
      "train_config": {...}                           # optional
    }

Floats are written with ``repr`` precision so a load reproduces the exact
parameters.
"""

from __future__ import annotations

import json
import os

import numpy as np

from clarq.encoder.model import DTYPE, PARAM_NAMES, PairScorerModel
from clarq.encoder.vocab import PAD, UNK, Vocabulary
from clarq.errors import SchemaError

MODEL_FORMAT = "clarq.model/1"


def save_model(model: PairScorerModel, path: str | os.PathLike, train_config: dict | None = None) -> None:
    payload = {
        "format": MODEL_FORMAT,
        "dims": {"d_e": model.d_e, "d_h": model.d_h, "d_f": model.d_f},
        "vocab": model.vocab.itos,
        "params": {
            name: {"shape": list(model.params[name].shape), "data": model.params[name].ravel().tolist()}
            for name in PARAM_NAMES
        },
    }
    if train_config is not None:
        payload["train_config"] = train_config
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, ensure_ascii=False)


def load_model(path: str | os.PathLike) -> tuple[PairScorerModel, dict | None]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT:
        raise SchemaError(f"{path}: model format {payload.get('format')!r}, expected {MODEL_FORMAT!r}")
    itos = payload["vocab"]
    if itos[:2] != [PAD, UNK]:
        raise SchemaError(f"{path}: vocabulary does not start with the special tokens")
    vocab = Vocabulary(itos[2:])
    params = {
        name: np.array(block["data"], dtype=DTYPE).reshape(block["shape"]) for name, block in payload["params"].items()
    }
    missing = set(PARAM_NAMES) - params.keys()
    if missing:
        raise SchemaError(f"{path}: missing parameter blocks {sorted(missing)}")
    return PairScorerModel(vocab, params), payload.get("train_config")

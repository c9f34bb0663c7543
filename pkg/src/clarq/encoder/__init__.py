from clarq.encoder.checkpoint import load_model, save_model
from clarq.encoder.model import PairScorerModel, encode, predict_proba, score_pair
from clarq.encoder.train import TrainConfig, fit, grad_check, score_pairs, train
from clarq.encoder.vocab import PAD_ID, UNK_ID, Vocabulary, tokenize

__all__ = [
    "PAD_ID",
    "UNK_ID",
    "PairScorerModel",
    "TrainConfig",
    "Vocabulary",
    "encode",
    "fit",
    "grad_check",
    "load_model",
    "predict_proba",
    "save_model",
    "score_pair",
    "score_pairs",
    "tokenize",
    "train",
]

"""Desk-scale laboratory for generative sequence-transduction recommenders."""

from .blocks import BlockConfig, block_forward, stack_forward
from .container import ContainerError, load_container, save_container
from .data import (
    DataError,
    InteractionLog,
    SynthSpec,
    UserSequence,
    build_sequences,
    ingest,
    split_leave_last,
    synth_generate,
    train_chains,
)
from .estimators import SequenceRanker, SequenceRecommender
from .metrics import EvalReport, auc, evaluate_ranking, evaluate_recall, hr_at_k, logloss, mrr, ndcg_at_k
from .model import ModelConfig, RecModel, forward_recall, init_model, ranking_logits
from .reference import ReferenceTable
from .tensor import Tensor
from .training import Adam, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "BlockConfig", "ContainerError", "DataError", "EvalReport",
    "InteractionLog", "ModelConfig", "RecModel", "ReferenceTable",
    "SequenceRanker", "SequenceRecommender", "SynthSpec", "Tensor",
    "TrainConfig", "UserSequence", "auc", "block_forward", "build_sequences",
    "evaluate_ranking", "evaluate_recall", "forward_recall", "hr_at_k",
    "ingest", "init_model", "load_checkpoint", "load_container", "logloss",
    "mrr", "ndcg_at_k", "ranking_logits", "save_checkpoint", "save_container",
    "split_leave_last", "stack_forward", "synth_generate", "train",
    "train_chains",
]

"""Binary-token-label (BTL) vs all-token-label (ATL) training for imbalanced NER."""

__version__ = "0.1.0"

from .batching import Batch, balance_batches, build_atl_batches, build_btl_batches
from .bias import BiasReport, LogitRecord, LogitRecords, compute_bias_report, epoch_ratio_series
from .corpus import (
    CorpusSplit,
    LabeledCorpus,
    LabeledDocument,
    LabelVocabulary,
    Passage,
    chunk_document,
    compute_class_weights,
    generate_random_labels,
    merge_labels,
    parse_brat,
    split_train_test,
)
from .evaluation import KnnModel, MetricsTable, compute_metrics, knn_fit, knn_predict
from .loss import LossBreakdown, batch_loss, token_loss
from .model import ModelConfig, ModelState, backward, forward, init_model
from .trainer import EpochTrace, TrainConfig, evaluate, train

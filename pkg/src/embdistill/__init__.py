"""embdistill: distill black-box text-embedding teachers into a local student
encoder and measure its retrieval fidelity."""

from .autograd import GradCheckReport, NumericError, Tensor, check_gradients
from .corpus import Collection, SplitSpec, TextRecord, dedup_contained, ingest_tsv, split_and_sample
from .encoder import EncoderConfig, EncoderParams, ProjectionParams, forward
from .errors import ConfigError, DataError
from .estimator import EmbeddingDistiller
from .evaluation import (
    EncoderPairing,
    EvalReport,
    Qrels,
    RunRanking,
    evaluate_pairing,
    exact_search,
    ndcg_at_k,
    recall_at_k,
)
from .losses import contrastive_loss, cosine_distance_loss
from .student import StudentModel, student_embed
from .synth import SyntheticWorld, WorldConfig, build_synthetic_dataset, simulate_teacher
from .teachers import (
    EmbeddingCache,
    EmbeddingCacheWriter,
    TeacherSpec,
    concat_teachers,
    estimate_cost,
    harvest,
    sim_cohere_spec,
    sim_openai_spec,
)
from .tokenizer import Tokenizer, build_vocab
from .trainer import AdamW, TrainingConfig, TrainingPair, make_targets, train

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "Collection",
    "ConfigError",
    "DataError",
    "EmbeddingCache",
    "EmbeddingCacheWriter",
    "EmbeddingDistiller",
    "EncoderConfig",
    "EncoderPairing",
    "EncoderParams",
    "EvalReport",
    "GradCheckReport",
    "NumericError",
    "ProjectionParams",
    "Qrels",
    "RunRanking",
    "SplitSpec",
    "StudentModel",
    "SyntheticWorld",
    "TeacherSpec",
    "Tensor",
    "TextRecord",
    "Tokenizer",
    "TrainingConfig",
    "TrainingPair",
    "WorldConfig",
    "build_synthetic_dataset",
    "build_vocab",
    "check_gradients",
    "concat_teachers",
    "contrastive_loss",
    "cosine_distance_loss",
    "dedup_contained",
    "estimate_cost",
    "evaluate_pairing",
    "exact_search",
    "forward",
    "harvest",
    "ingest_tsv",
    "make_targets",
    "ndcg_at_k",
    "recall_at_k",
    "sim_cohere_spec",
    "sim_openai_spec",
    "simulate_teacher",
    "split_and_sample",
    "student_embed",
    "train",
]

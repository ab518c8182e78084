"""Multilingual tweet intimacy regression with language-routed model ensembles."""

__version__ = "0.1.0"

from .dataset import (
    KNOWN_LANGUAGES,
    SEEN_LANGUAGES,
    UNSEEN_LANGUAGES,
    DatasetSplit,
    LabeledExample,
    Source,
    filter_scored,
    load_corpus,
    make_splits,
    remap_score,
)
from .registry import Mode, ModelKind, ModelSpec, Registry, default_registry, load_registry, resolve
from .training import RegressorHandle, StubBackend, TrainConfig, finetune, predict_batch
from .ensemble import EnsembleConfig, PredictionRecord, combine, predict_example, predict_examples
from .augmentation import IdentityTranslator, DictionaryTranslator, augment_examples, predict_augmented
from .evaluation import EvaluationReport, evaluate, kde_curve, pearson_r, render_report

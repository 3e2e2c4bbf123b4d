"""Audit harness for local-music bias in collaborative filtering recommenders."""

__version__ = "0.1.0"

from .bias import (
    AggregateRow,
    BiasRecord,
    SweepSpec,
    aggregate,
    dataset_bias,
    list_local_proportion,
    read_aggregate,
    read_records,
    run_sweep,
    sweep,
    user_bias_term,
    write_aggregate,
    write_records,
)
from .corpus import (
    Dataset,
    InteractionMatrix,
    ListeningEvent,
    build_interactions,
    dataset_from_events,
    filter_country,
    ingest_events,
    split_validation,
    user_profiles,
    write_events,
)
from .errors import ConfigError, DataError, TrainingDivergedError
from .evaluation import HoldOutCase, ValidationResult, hold_out, mrr_at_k, validate
from .itemknn import ItemKNNConfig, ItemKNNModel, fit
from .locality import (
    CoverageReport,
    LabelSource,
    LabelTable,
    LocalHistogram,
    UnlabeledPolicy,
    coverage_report,
    ingest_labels,
    local_histogram,
    local_proportion,
    resolve_track_country,
    write_coverage,
    write_histogram,
    write_labels,
)
from .neumf import NeuMFModel, TrainConfig, load_model, save_model
from .neumf import train as train_neumf
from .synth import CountrySpec, SynthConfig, SynthResult, generate, write_ground_truth

__all__ = [
    "AggregateRow",
    "BiasRecord",
    "ConfigError",
    "CountrySpec",
    "CoverageReport",
    "DataError",
    "Dataset",
    "HoldOutCase",
    "InteractionMatrix",
    "ItemKNNConfig",
    "ItemKNNModel",
    "LabelSource",
    "LabelTable",
    "ListeningEvent",
    "LocalHistogram",
    "NeuMFModel",
    "SweepSpec",
    "SynthConfig",
    "SynthResult",
    "TrainConfig",
    "TrainingDivergedError",
    "UnlabeledPolicy",
    "ValidationResult",
    "aggregate",
    "build_interactions",
    "coverage_report",
    "dataset_bias",
    "dataset_from_events",
    "filter_country",
    "fit",
    "generate",
    "hold_out",
    "ingest_events",
    "ingest_labels",
    "list_local_proportion",
    "load_model",
    "local_histogram",
    "local_proportion",
    "mrr_at_k",
    "read_aggregate",
    "read_records",
    "resolve_track_country",
    "run_sweep",
    "save_model",
    "split_validation",
    "sweep",
    "train_neumf",
    "user_bias_term",
    "user_profiles",
    "validate",
    "write_aggregate",
    "write_coverage",
    "write_events",
    "write_ground_truth",
    "write_histogram",
    "write_labels",
    "write_records",
]

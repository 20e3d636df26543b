"""Bayesian network meta-analysis of diagnostic test accuracy with multiple thresholds."""

__version__ = "0.1.0"

from .dataset import (Dataset, DatasetError, DiseaseGroup, NetworkGraph, TestDescriptor, TestKind,  # noqa: E402
                      ThresholdSeries, build_network_graph, parse_dataset, read_dataset,
                      reduce_to_reference_thresholds, select_reference_threshold, validate_for_model)
from .likelihood import AccuracyParams, chain_loglik, dataset_loglik, multinomial_oracle, positive_prob  # noqa: E402
from .model import (CovarianceStructure, Model, ModelSpec, ModelVariant, ParameterState, PriorConfig,  # noqa: E402
                    WishartConvention, build_layout, log_posterior, log_prior, random_effects_logdensity)
from .simulate import simulate_dataset  # noqa: E402

__all__ = [
    "Dataset", "DatasetError", "DiseaseGroup", "NetworkGraph", "TestDescriptor", "TestKind", "ThresholdSeries",
    "build_network_graph", "parse_dataset", "read_dataset", "reduce_to_reference_thresholds",
    "select_reference_threshold", "validate_for_model",
    "AccuracyParams", "chain_loglik", "dataset_loglik", "multinomial_oracle", "positive_prob",
    "CovarianceStructure", "Model", "ModelSpec", "ModelVariant", "ParameterState", "PriorConfig",
    "WishartConvention", "build_layout", "log_posterior", "log_prior", "random_effects_logdensity",
    "simulate_dataset",
]

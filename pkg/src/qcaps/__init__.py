"""Capsule-network inference with simulated fixed-point quantization and
per-layer wordlength search."""

from .fixedpoint import (FixedPointFormat, Quantizer, RandomStream,
                         RoundingScheme, epsilon, quantize_tensor,
                         quantize_value, representable_range)
from .capsnet import (CapsModel, DeepCapsConfig, LayerKind, LayerSpec,
                      QuantConfig, build_deepcaps_like, build_shallowcaps,
                      dynamic_routing, evaluate, forward, predict,
                      randomize_weights, routing_softmax, squash)
from .model_io import (LabeledDataset, ManifestError, WeightManifest,
                       load_architecture, load_idx, load_model, save_idx,
                       save_model, write_report)
from .search import (AccuracyOracle, InfeasibleBudgetError, SearchFailure,
                     SearchInputs, SearchOutcome, Selection, QuantTarget,
                     activation_memory_bits, binary_search_uniform,
                     dr_quantization, layerwise_quantization, measure,
                     memory_budget_wordlengths, run_framework,
                     select_rounding_scheme, step1_threshold,
                     target_accuracy, weight_memory_bits)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Discourse-aware conversation classification.

Utterance embeddings are encoded over an explicit discourse graph by a
stack of attention layers, then consumed by a bidirectional recurrent
cell that gates the graph state into its memory. Everything runs on a
small float64 reverse-mode autodiff core, so results are exactly
reproducible and gradients are machine-checkable.
"""

from .autodiff import DiffValue, NonFiniteError, ShapeError, Tape, TapeError, grad_check
from .corpus import (Corpus, CorpusError, Dialogue, EmbeddingStore, ExpectedCounts,
                     ManifestReport, MELD_LABELS, MMELD_EXPECTED, Utterance,
                     load_corpus, load_embeddings, save_corpus, save_embeddings,
                     validate_manifest, verify_coverage)
from .graph import DiscourseGraph, GraphError, GraphStats, build_graph, edge_stats
from .metrics import ClassMetrics, MetricsReport, format_report, weighted_f1
from .model import (ConfigError, ModelConfig, ModelParams, forward, infer_logits,
                    init_params, load_checkpoint, param_shapes, save_checkpoint)
from .synth import SynthConfig, class_prototypes, generate_synthetic, label_rule
from .training import (AdamState, TrainConfig, TrainHistory, adam_step, cross_entropy,
                       evaluate, predict_dialogue, train)

__version__ = "0.1.0"

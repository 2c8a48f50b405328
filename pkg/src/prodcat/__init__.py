"""Product categorization at desk scale.

A flat Multi-CNN text classifier with an optional structured-attribute
channel, a hierarchical per-node baseline, SGDR training, top-k/f1
evaluation, and a micro-batching inference service.
"""

from .autodiff import (
    ConvBankSpec,
    Parameter,
    Tensor,
    concat,
    conv_bank,
    conv1d,
    embedding_lookup,
    grad_check,
    linear,
    masked_maxpool_time,
    masked_mean_time,
    maxpool_time,
    mean_time,
    no_grad,
    relu,
    softmax,
    softmax_cross_entropy,
)
from .catalog import (
    CorpusError,
    DatasetSplit,
    LabeledExample,
    Product,
    Taxonomy,
    examples_to_xy,
    ingest,
    split,
    stratify,
    write_corpus,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .hierarchy import HierarchicalClassifier, bow_matrix, fnv1a64, hashed_bow
from .models import ChannelSpec, ModelConfig, MultiCnnClassifier
from .serving import BatcherConfig, MicroBatcher, PredictionService, make_server
from .synthetic import (
    SyntheticSpec,
    confusable_corpus,
    generate_corpus,
    separator_collision_corpus,
)
from .text import (
    Dictionary,
    TokenSequence,
    build_attribute_dictionary,
    build_dictionary,
    encode,
    naturalize,
    serialize_structured,
    tokenize,
)
from .training import (
    MetricsReport,
    SgdrSchedule,
    evaluate,
    f1_lift_report,
    lr_at,
)

__version__ = "0.1.0"

__all__ = [
    "BatcherConfig",
    "ChannelSpec",
    "ConvBankSpec",
    "CorpusError",
    "DatasetSplit",
    "Dictionary",
    "HierarchicalClassifier",
    "LabeledExample",
    "MetricsReport",
    "MicroBatcher",
    "ModelConfig",
    "MultiCnnClassifier",
    "Parameter",
    "PredictionService",
    "Product",
    "SgdrSchedule",
    "SyntheticSpec",
    "Taxonomy",
    "Tensor",
    "TokenSequence",
    "bow_matrix",
    "build_attribute_dictionary",
    "build_dictionary",
    "concat",
    "confusable_corpus",
    "conv1d",
    "conv_bank",
    "embedding_lookup",
    "encode",
    "evaluate",
    "examples_to_xy",
    "f1_lift_report",
    "fnv1a64",
    "generate_corpus",
    "grad_check",
    "hashed_bow",
    "ingest",
    "linear",
    "load_checkpoint",
    "lr_at",
    "make_server",
    "masked_maxpool_time",
    "masked_mean_time",
    "maxpool_time",
    "mean_time",
    "naturalize",
    "no_grad",
    "relu",
    "save_checkpoint",
    "separator_collision_corpus",
    "serialize_structured",
    "softmax",
    "softmax_cross_entropy",
    "split",
    "stratify",
    "tokenize",
    "write_corpus",
]

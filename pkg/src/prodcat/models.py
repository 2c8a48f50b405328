"""The flat Multi-CNN classifier family.

Each unstructured attribute gets its own channel: embedding lookup, a bank
of width-1..5 convolutions, and max-over-time pooling. Structured attributes
are serialized into one text string and contribute either nothing
(`structured_mode="none"`), the mean of their word embeddings (`"word_avg"`),
or a full convolutional channel of their own (`"conv"`). All channel features
are concatenated and fed through fully connected layers into a softmax.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import configfile
from .autodiff import (
    ConvBankSpec,
    Parameter,
    Tensor,
    concat,
    conv1d,
    embedding_lookup,
    linear,
    masked_maxpool_time,
    masked_mean_time,
    no_grad,
    relu,
    softmax,
)
from .catalog import Product
from .checkpoint import load_checkpoint, save_checkpoint
from .text import (
    MIN_ENCODED_LEN,
    Dictionary,
    TokenSequence,
    build_attribute_dictionary,
    build_dictionary,
    encode,
    serialize_structured,
)
from .training import SgdrSchedule, sgd_train
from .validation import check_consistent_length

STRUCTURED_KEY = "__structured__"
STRUCTURED_MODES = ("none", "word_avg", "conv")


@dataclass(frozen=True)
class ChannelSpec:
    """One unstructured-attribute channel: where the text comes from, how
    long a sequence it keeps, and how large its dictionary may grow."""

    attribute: str
    max_len: int
    dict_size: int

    def __post_init__(self):
        if not self.attribute:
            raise ValueError("channel attribute name must be non-empty")
        if self.max_len < 1 or self.dict_size < 3:
            raise ValueError(f"invalid channel spec {self}")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of a Multi-CNN classifier."""

    channels: tuple[ChannelSpec, ...]
    num_classes: int
    structured_mode: str = "conv"
    conv: ConvBankSpec = field(default_factory=ConvBankSpec)
    fc_sizes: tuple[int, ...] = (512, 512)
    embed_dim: int = 200
    structured_max_len: int = 256
    structured_dict_size: int = 100_000
    structured_separator: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.channels:
            raise ValueError("at least one unstructured channel is required")
        if self.structured_mode not in STRUCTURED_MODES:
            raise ValueError(f"structured_mode must be one of {STRUCTURED_MODES}")
        if self.embed_dim != self.conv.embed_dim:
            raise ValueError(
                f"embed_dim {self.embed_dim} != conv filter depth {self.conv.embed_dim}"
            )

    def feature_width(self) -> int:
        """Width of the concatenated feature vector entering the FC stack."""
        width = len(self.channels) * self.conv.features
        if self.structured_mode == "conv":
            width += self.conv.features
        elif self.structured_mode == "word_avg":
            width += self.embed_dim
        return width

    def channel_keys(self) -> list[str]:
        keys = [ch.attribute for ch in self.channels]
        if self.structured_mode != "none":
            keys.append(STRUCTURED_KEY)
        return keys

    def to_dict(self) -> dict:
        return {
            "channels": [[c.attribute, c.max_len, c.dict_size] for c in self.channels],
            "num_classes": self.num_classes,
            "structured_mode": self.structured_mode,
            "widths": list(self.conv.widths),
            "filters_per_width": self.conv.filters_per_width,
            "fc_sizes": list(self.fc_sizes),
            "embed_dim": self.embed_dim,
            "structured_max_len": self.structured_max_len,
            "structured_dict_size": self.structured_dict_size,
            "structured_separator": self.structured_separator,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(
            channels=tuple(ChannelSpec(a, int(m), int(d)) for a, m, d in doc["channels"]),
            num_classes=int(doc["num_classes"]),
            structured_mode=doc["structured_mode"],
            conv=ConvBankSpec(
                widths=tuple(int(w) for w in doc["widths"]),
                filters_per_width=int(doc["filters_per_width"]),
                embed_dim=int(doc["embed_dim"]),
            ),
            fc_sizes=tuple(int(s) for s in doc["fc_sizes"]),
            embed_dim=int(doc["embed_dim"]),
            structured_max_len=int(doc["structured_max_len"]),
            structured_dict_size=int(doc["structured_dict_size"]),
            structured_separator=bool(doc["structured_separator"]),
        )

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def init_parameters(
    config: ModelConfig, vocab_sizes: Mapping[str, int], seed: int
) -> OrderedDict[str, Parameter]:
    """Fresh float32 parameters for a config: embeddings uniform(-0.05, 0.05),
    conv and dense weights fan-in-scaled uniform, biases zero. Draw order is
    fixed so the same seed always yields the same initialization."""
    rng = np.random.default_rng([seed, 0x11])
    params: OrderedDict[str, Parameter] = OrderedDict()

    def uniform(shape, limit):
        return rng.uniform(-limit, limit, size=shape).astype(np.float32)

    def add(name, array):
        params[name] = Parameter(array, name=name)

    conv_channels = [ch.attribute for ch in config.channels]
    if config.structured_mode == "conv":
        conv_channels.append(STRUCTURED_KEY)
    for key in config.channel_keys():
        add(f"embedding/{key}", uniform((vocab_sizes[key], config.embed_dim), 0.05))
    for key in conv_channels:
        for width in config.conv.widths:
            fan_in = width * config.embed_dim
            add(
                f"conv/{key}/width{width}/weight",
                uniform((width, config.embed_dim, config.conv.filters_per_width), 1 / math.sqrt(fan_in)),
            )
            add(
                f"conv/{key}/width{width}/bias",
                np.zeros(config.conv.filters_per_width, dtype=np.float32),
            )
    in_width = config.feature_width()
    for i, size in enumerate(config.fc_sizes):
        add(f"fc{i}/weight", uniform((in_width, size), 1 / math.sqrt(in_width)))
        add(f"fc{i}/bias", np.zeros(size, dtype=np.float32))
        in_width = size
    add("output/weight", uniform((in_width, config.num_classes), 1 / math.sqrt(in_width)))
    add("output/bias", np.zeros(config.num_classes, dtype=np.float32))
    return params


def _batch_indices(seqs: Sequence[TokenSequence], pad_to: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length sequences into a PAD-filled [B, T] matrix."""
    idx = np.zeros((len(seqs), pad_to), dtype=np.int64)
    n_real = np.empty(len(seqs), dtype=np.int64)
    for row, seq in enumerate(seqs):
        idx[row, : len(seq.indices)] = seq.indices
        n_real[row] = seq.n_real
    return idx, n_real


def _conv_channel(
    seqs: Sequence[TokenSequence],
    key: str,
    config: ModelConfig,
    params: Mapping[str, Parameter],
) -> Tensor:
    """Embedding -> conv bank -> masked max pooling for one channel.

    The batch is padded to max(real length) + widest filter - 1 so that every
    window overlapping a real token exists regardless of batch composition;
    windows seeing only padding are masked out of the max. Together these
    make channel features identical whether a product is scored alone or
    inside any batch.
    """
    max_width = config.conv.max_width
    longest = max(seq.n_real for seq in seqs)
    pad_to = max(MIN_ENCODED_LEN, longest + max_width - 1, max_width)
    idx, n_real = _batch_indices(seqs, pad_to)
    emb = embedding_lookup(params[f"embedding/{key}"], idx)
    pooled = []
    for width in config.conv.widths:
        fmap = conv1d(
            emb,
            params[f"conv/{key}/width{width}/weight"],
            params[f"conv/{key}/width{width}/bias"],
        )
        valid = np.minimum(n_real, pad_to - width + 1)
        pooled.append(masked_maxpool_time(fmap, valid))
    return concat(pooled, axis=-1) if len(pooled) > 1 else pooled[0]


def _word_avg_channel(
    seqs: Sequence[TokenSequence], config: ModelConfig, params: Mapping[str, Parameter]
) -> Tensor:
    longest = max(seq.n_real for seq in seqs)
    idx, n_real = _batch_indices(seqs, max(MIN_ENCODED_LEN, longest))
    emb = embedding_lookup(params[f"embedding/{STRUCTURED_KEY}"], idx)
    return masked_mean_time(emb, n_real)


class _Encoder:
    """Turns products into per-channel token sequences, with an optional
    memo cache keyed by product id for the training loop (ids are unique
    within a corpus, so repeated epochs and stratified repeats reuse work)."""

    def __init__(self, config: ModelConfig, dictionaries: Mapping[str, Dictionary], use_cache: bool):
        self.config = config
        self.dictionaries = dictionaries
        self.cache: dict[tuple[str, str], TokenSequence] | None = {} if use_cache else None

    def sequences(self, products: Sequence[Product], key: str) -> list[TokenSequence]:
        config = self.config
        out = []
        for product in products:
            cache_key = (key, product.id)
            if self.cache is not None and cache_key in self.cache:
                out.append(self.cache[cache_key])
                continue
            if key == STRUCTURED_KEY:
                with_sep = config.structured_separator and config.structured_mode == "conv"
                text = serialize_structured(product, with_separator=with_sep)
                seq = encode(text, self.dictionaries[key], config.structured_max_len, source_attribute=key)
            else:
                spec = next(ch for ch in config.channels if ch.attribute == key)
                seq = encode(product.text(key), self.dictionaries[key], spec.max_len, source_attribute=key)
            if self.cache is not None:
                self.cache[cache_key] = seq
            out.append(seq)
        return out


def forward_logits(
    products: Sequence[Product],
    config: ModelConfig,
    params: Mapping[str, Parameter],
    encoder: _Encoder,
) -> Tensor:
    """Batched forward pass producing [B, num_classes] logits."""
    if not products:
        raise ValueError("forward pass needs at least one product")
    features = []
    for ch in config.channels:
        features.append(_conv_channel(encoder.sequences(products, ch.attribute), ch.attribute, config, params))
    if config.structured_mode == "conv":
        features.append(
            _conv_channel(encoder.sequences(products, STRUCTURED_KEY), STRUCTURED_KEY, config, params)
        )
    elif config.structured_mode == "word_avg":
        features.append(_word_avg_channel(encoder.sequences(products, STRUCTURED_KEY), config, params))
    x = concat(features, axis=-1) if len(features) > 1 else features[0]
    for i in range(len(config.fc_sizes)):
        x = relu(linear(x, params[f"fc{i}/weight"], params[f"fc{i}/bias"]))
    return linear(x, params["output/weight"], params["output/bias"])


class MultiCnnClassifier(BaseEstimator, ClassifierMixin):
    """Flat product-type classifier over text channels and structured attributes.

    Follows the scikit-learn estimator protocol: hyperparameters in
    ``__init__``, state learned by ``fit`` on ``(X, y)`` where X is a
    sequence of :class:`~prodcat.catalog.Product` and y the leaf labels.

    Parameters
    ----------
    channels : sequence of (attribute, max_len, dict_size) tuples
        Unstructured text channels. Defaults follow the reference setup:
        product_name capped at 500k tokens, the short description at 1M.
    structured_mode : "none" | "word_avg" | "conv"
        How serialized structured attributes enter the network.
    structured_separator : bool
        Whether the serialized string puts ``__sep__`` between attributes
        (conv mode only; word averaging always skips separators).
    epochs : int
        Total training epochs; SGDR restarts at cumulative epochs 1, 3, 7...
    val_fraction : float
        Per-class share carved out of (X, y) for validation when ``fit`` is
        not given an explicit ``eval_set``.
    """

    def __init__(
        self,
        channels: Sequence[tuple[str, int, int]] = (
            ("product_name", 32, 500_000),
            ("product_short_description", 256, 1_000_000),
        ),
        structured_mode: str = "conv",
        widths: Sequence[int] = (1, 2, 3, 4, 5),
        filters_per_width: int = 128,
        embed_dim: int = 200,
        fc_sizes: Sequence[int] = (512, 512),
        structured_max_len: int = 256,
        structured_dict_size: int = 100_000,
        structured_separator: bool = True,
        base_lr: float = 0.05,
        min_lr: float = 0.0,
        momentum: float = 0.0,
        batch_size: int = 64,
        epochs: int = 7,
        val_fraction: float = 0.1,
        seed: int = 0,
    ):
        self.channels = channels
        self.structured_mode = structured_mode
        self.widths = widths
        self.filters_per_width = filters_per_width
        self.embed_dim = embed_dim
        self.fc_sizes = fc_sizes
        self.structured_max_len = structured_max_len
        self.structured_dict_size = structured_dict_size
        self.structured_separator = structured_separator
        self.base_lr = base_lr
        self.min_lr = min_lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.val_fraction = val_fraction
        self.seed = seed

    # -- construction helpers ------------------------------------------------

    def _build_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            channels=tuple(ChannelSpec(a, int(m), int(d)) for a, m, d in self.channels),
            num_classes=num_classes,
            structured_mode=self.structured_mode,
            conv=ConvBankSpec(
                widths=tuple(int(w) for w in self.widths),
                filters_per_width=int(self.filters_per_width),
                embed_dim=int(self.embed_dim),
            ),
            fc_sizes=tuple(int(s) for s in self.fc_sizes),
            embed_dim=int(self.embed_dim),
            structured_max_len=int(self.structured_max_len),
            structured_dict_size=int(self.structured_dict_size),
            structured_separator=bool(self.structured_separator),
        )

    def _bind(
        self,
        config: ModelConfig,
        dictionaries: Mapping[str, Dictionary],
        classes: Sequence[str],
        arrays: Mapping[str, np.ndarray],
    ) -> "MultiCnnClassifier":
        """Attach fitted state (used by fit, load, and tests that need an
        initialized-but-untrained model)."""
        self.config_ = config
        self.dictionaries_ = dict(dictionaries)
        self.classes_ = list(classes)
        self.params_ = OrderedDict(
            (name, Parameter(np.asarray(arr, dtype=np.float32), name=name))
            for name, arr in arrays.items()
        )
        self._encoder = _Encoder(config, self.dictionaries_, use_cache=False)
        return self

    def _carve_validation(self, X, y):
        rng = np.random.default_rng([self.seed, 0x7A])
        by_label: dict[str, list[int]] = {}
        for i, label in enumerate(y):
            by_label.setdefault(label, []).append(i)
        val_idx: list[int] = []
        for label, members in by_label.items():
            order = rng.permutation(len(members))
            n_val = min(len(members) - 1, int(round(self.val_fraction * len(members))))
            val_idx.extend(members[i] for i in order[:n_val])
        val_set = set(val_idx)
        train_idx = [i for i in range(len(X)) if i not in val_set]
        return train_idx, sorted(val_set)

    def fit(self, X: Sequence[Product], y: Sequence[str], eval_set=None):
        check_consistent_length(X, y)
        if len(X) == 0:
            raise ValueError("fit needs at least one example")
        self.classes_ = sorted(set(y))
        if len(self.classes_) < 2:
            raise ValueError("fit needs at least two distinct labels")
        if eval_set is None and self.val_fraction > 0:
            train_idx, val_idx = self._carve_validation(X, y)
            X_train = [X[i] for i in train_idx]
            y_train = [y[i] for i in train_idx]
            X_val = [X[i] for i in val_idx]
            y_val = [y[i] for i in val_idx]
        else:
            X_train, y_train = list(X), list(y)
            X_val, y_val = (list(eval_set[0]), list(eval_set[1])) if eval_set else ([], [])

        config = self._build_config(num_classes=len(self.classes_))
        dictionaries: dict[str, Dictionary] = {}
        for ch in config.channels:
            dictionaries[ch.attribute] = build_dictionary(
                (p.text(ch.attribute) for p in X_train), ch.dict_size
            )
        if config.structured_mode != "none":
            dictionaries[STRUCTURED_KEY] = build_attribute_dictionary(
                X_train, config.structured_dict_size
            )
        vocab_sizes = {key: len(dictionaries[key]) for key in config.channel_keys()}
        params = init_parameters(config, vocab_sizes, seed=self.seed)

        label_index = {label: i for i, label in enumerate(self.classes_)}
        y_train_idx = np.asarray([label_index[label] for label in y_train], dtype=np.int64)
        y_val_idx = np.asarray([label_index[label] for label in y_val], dtype=np.int64)

        encoder = _Encoder(config, dictionaries, use_cache=True)
        schedule = SgdrSchedule(
            base_lr=self.base_lr,
            min_lr=self.min_lr,
            steps_per_epoch=max(1, math.ceil(len(X_train) / self.batch_size)),
        )
        result = sgd_train(
            forward_fn=lambda batch: forward_logits(batch, config, params, encoder),
            params=params,
            X=X_train,
            y=y_train_idx,
            X_val=X_val,
            y_val=y_val_idx,
            schedule=schedule,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            momentum=self.momentum,
        )
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self._bind(config, dictionaries, self.classes_, result.arrays)

    # -- inference -----------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise RuntimeError("this MultiCnnClassifier instance is not fitted yet")

    def decision_function(self, X: Sequence[Product]) -> np.ndarray:
        """Raw logits, [n, num_classes]."""
        self._check_fitted()
        if isinstance(X, Product):
            raise TypeError("X must be a sequence of Product, not a single Product")
        chunks = []
        with no_grad():
            for start in range(0, len(X), self.batch_size):
                batch = list(X[start : start + self.batch_size])
                if batch:
                    chunks.append(
                        forward_logits(batch, self.config_, self.params_, self._encoder).data
                    )
        return np.concatenate(chunks, axis=0) if chunks else np.empty((0, len(self.classes_)))

    def predict_proba(self, X: Sequence[Product]) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X: Sequence[Product]) -> list[str]:
        probs = self.predict_proba(X)
        return [self.classes_[i] for i in probs.argmax(axis=1)]

    def predict_topk(self, X: Sequence[Product], k: int = 3) -> list[list[tuple[str, float]]]:
        """Per product, the k most probable labels with their probabilities,
        descending; ties broken by class index."""
        self._check_fitted()
        if not 1 <= k <= len(self.classes_):
            raise ValueError(f"k must be in [1, {len(self.classes_)}], got {k}")
        probs = self.predict_proba(X)
        order = np.argsort(-probs, axis=1, kind="stable")[:, :k]
        return [
            [(self.classes_[j], float(probs[i, j])) for j in order[i]]
            for i in range(probs.shape[0])
        ]

    # -- persistence ----------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        """Write manifest, dictionary files, and the weight checkpoint."""
        self._check_fitted()
        directory = Path(directory)
        (directory / "dicts").mkdir(parents=True, exist_ok=True)
        manifest: dict[str, object] = {"model_type": "multicnn"}
        manifest.update(
            {
                "channels": ",".join(
                    f"{c.attribute}:{c.max_len}:{c.dict_size}" for c in self.config_.channels
                ),
                "structured_mode": self.config_.structured_mode,
                "widths": self.config_.conv.widths,
                "filters_per_width": self.config_.conv.filters_per_width,
                "embed_dim": self.config_.embed_dim,
                "fc_sizes": self.config_.fc_sizes,
                "structured_max_len": self.config_.structured_max_len,
                "structured_dict_size": self.config_.structured_dict_size,
                "structured_separator": self.config_.structured_separator,
                "num_classes": self.config_.num_classes,
                "classes_file": "classes.txt",
                "checkpoint": "checkpoint.bin",
            }
        )
        for key in self.config_.channel_keys():
            self.dictionaries_[key].save(directory / "dicts" / f"{key}.dict")
            manifest[f"dict.{key}"] = f"dicts/{key}.dict"
        with open(directory / "classes.txt", "w", encoding="utf-8") as fh:
            fh.writelines(label + "\n" for label in self.classes_)
        save_checkpoint(
            directory / "checkpoint.bin",
            {name: p.data for name, p in self.params_.items()},
            config_hash=self.config_.hash(),
        )
        configfile.write_kv(directory / "manifest.txt", manifest)

    @classmethod
    def load(cls, directory: str | Path) -> "MultiCnnClassifier":
        directory = Path(directory)
        manifest = configfile.read_kv(directory / "manifest.txt")
        if manifest.get("model_type") != "multicnn":
            raise ValueError(f"{directory}: not a multicnn model directory")
        channels = tuple(
            (a, int(m), int(d))
            for a, m, d in (part.split(":") for part in manifest["channels"].split(","))
        )
        est = cls(
            channels=channels,
            structured_mode=manifest["structured_mode"],
            widths=configfile.parse_int_tuple(manifest["widths"]),
            filters_per_width=int(manifest["filters_per_width"]),
            embed_dim=int(manifest["embed_dim"]),
            fc_sizes=configfile.parse_int_tuple(manifest["fc_sizes"]),
            structured_max_len=int(manifest["structured_max_len"]),
            structured_dict_size=int(manifest["structured_dict_size"]),
            structured_separator=configfile.parse_bool(manifest["structured_separator"]),
        )
        config = est._build_config(num_classes=int(manifest["num_classes"]))
        with open(directory / manifest["classes_file"], "r", encoding="utf-8") as fh:
            classes = [line.rstrip("\n") for line in fh if line.strip()]
        dictionaries = {
            key: Dictionary.load(directory / manifest[f"dict.{key}"])
            for key in config.channel_keys()
        }
        arrays, _ = load_checkpoint(directory / manifest["checkpoint"], expected_hash=config.hash())
        return est._bind(config, dictionaries, classes, arrays)

"""Catalog ingestion, taxonomy handling, and dataset splitting.

A corpus is a JSON-lines file, one product record per line:

    {"id": "...", "label": "...", "unstructured": {"product_name": "..."},
     "structured": [["color", "White"], ["brand", "Rails"]]}

Labels must be leaves of the taxonomy the corpus is ingested against.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .validation import check_fractions, check_positive, check_product_fields

logger = logging.getLogger(__name__)

PATH_SEP = "/"


class CorpusError(ValueError):
    """A corpus record or file violates the expected format."""


@dataclass
class Product:
    """One catalog item: free-text attributes plus ordered name/value pairs."""

    id: str
    unstructured: dict[str, str] = field(default_factory=dict)
    structured: list[tuple[str, str]] = field(default_factory=list)

    def text(self, attribute: str) -> str:
        """Unstructured attribute text; missing attributes read as empty."""
        return self.unstructured.get(attribute, "")

    def to_record(self, label: str | None = None) -> dict:
        record = {
            "id": self.id,
            "unstructured": dict(self.unstructured),
            "structured": [[n, v] for n, v in self.structured],
        }
        if label is not None:
            record["label"] = label
        return record


@dataclass
class LabeledExample:
    product: Product
    label: str


class Taxonomy:
    """Rooted tree of category nodes whose leaves are the class labels.

    Nodes are addressed by their `/`-joined root path. Leaf names double as
    classification labels and must therefore be unique across the whole tree,
    not just among siblings.
    """

    def __init__(self, paths: Iterable[Sequence[str]]):
        child_map: OrderedDict[str, list[str]] = OrderedDict()
        leaf_paths: OrderedDict[str, str] = OrderedDict()
        roots: list[str] = []
        all_paths = [tuple(p) for p in paths]
        if not all_paths:
            raise ValueError("taxonomy needs at least one root-to-leaf path")
        for parts in all_paths:
            if not parts or any(not name for name in parts):
                raise ValueError(f"invalid taxonomy path: {parts!r}")
            if parts[0] not in roots:
                roots.append(parts[0])
            for depth in range(1, len(parts)):
                parent = PATH_SEP.join(parts[:depth])
                child = parts[depth]
                children = child_map.setdefault(parent, [])
                if child not in children:
                    children.append(child)
            leaf = parts[-1]
            full = PATH_SEP.join(parts)
            if leaf in leaf_paths and leaf_paths[leaf] != full:
                raise ValueError(f"leaf name {leaf!r} is not unique in the taxonomy")
            leaf_paths[leaf] = full
        if len(roots) != 1:
            raise ValueError(f"taxonomy must have a single root, found {roots}")
        for leaf, full in leaf_paths.items():
            if full in child_map:
                raise ValueError(f"node {full!r} is both a leaf and an internal node")
        self.root = roots[0]
        self._children = child_map
        self._leaf_paths = leaf_paths

    @property
    def leaves(self) -> list[str]:
        return list(self._leaf_paths)

    def is_leaf(self, label: str) -> bool:
        return label in self._leaf_paths

    def path_to(self, label: str) -> tuple[str, ...]:
        """Root-to-leaf node names for a leaf label."""
        try:
            return tuple(self._leaf_paths[label].split(PATH_SEP))
        except KeyError:
            raise KeyError(f"{label!r} is not a leaf of the taxonomy") from None

    def children(self, node_path: str) -> list[str]:
        """Child node names of an internal node path; empty for leaves."""
        return list(self._children.get(node_path, []))

    def internal_nodes(self) -> list[str]:
        return list(self._children)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for leaf_path in self._leaf_paths.values():
                fh.write(leaf_path + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Taxonomy":
        with open(path, "r", encoding="utf-8") as fh:
            paths = [line.strip().split(PATH_SEP) for line in fh if line.strip()]
        return cls(paths)


@dataclass
class DatasetSplit:
    train: list[LabeledExample]
    validation: list[LabeledExample]
    test: list[LabeledExample]
    fractions: tuple[float, float, float] = (0.80, 0.10, 0.10)

    def __iter__(self):
        return iter((self.train, self.validation, self.test))


def parse_record(record: dict, taxonomy: Taxonomy | None = None) -> LabeledExample:
    """Validate one decoded corpus record and build a LabeledExample."""
    if not isinstance(record, dict):
        raise CorpusError("record is not an object")
    label = record.get("label")
    if not isinstance(label, str) or not label:
        raise CorpusError("missing or invalid 'label'")
    bad = check_product_fields(
        record.get("id"), record.get("unstructured", {}), record.get("structured", [])
    )
    if bad:
        raise CorpusError(f"invalid fields: {', '.join(bad)}")
    if taxonomy is not None and not taxonomy.is_leaf(label):
        raise CorpusError(f"label {label!r} is not a leaf of the taxonomy")
    product = Product(
        id=record["id"],
        unstructured=dict(record.get("unstructured", {})),
        structured=[(n, v) for n, v in record.get("structured", [])],
    )
    return LabeledExample(product=product, label=label)


def ingest(
    path: str | Path, taxonomy: Taxonomy, *, strict: bool = True
) -> list[LabeledExample]:
    """Read a JSON-lines corpus, validating every record against the taxonomy.

    In strict mode (default) the first bad record aborts with a CorpusError
    naming its line number; otherwise bad records are logged and skipped.
    Duplicate product ids are always record-level errors: the id is the join
    key for service responses.
    """
    examples: list[LabeledExample] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"malformed record: {exc.msg}") from None
                example = parse_record(record, taxonomy)
                if example.product.id in seen_ids:
                    raise CorpusError(f"duplicate product id {example.product.id!r}")
            except CorpusError as exc:
                if strict:
                    raise CorpusError(f"line {lineno}: {exc}") from None
                logger.warning("skipping line %d: %s", lineno, exc)
                continue
            seen_ids.add(example.product.id)
            examples.append(example)
    return examples


def write_corpus(examples: Iterable[LabeledExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.product.to_record(ex.label), ensure_ascii=False) + "\n")


def _group_by_label(examples: Sequence[LabeledExample]) -> OrderedDict[str, list[LabeledExample]]:
    groups: OrderedDict[str, list[LabeledExample]] = OrderedDict()
    for ex in examples:
        groups.setdefault(ex.label, []).append(ex)
    return groups


def stratify(examples: Sequence[LabeledExample], floor: int = 200) -> list[LabeledExample]:
    """Repeat low-support classes cyclically until each reaches `floor` examples.

    Original examples are kept in corpus order; repetitions are appended per
    class, cycling over that class's originals, so the result is deterministic
    and a second pass is a no-op.
    """
    check_positive(floor, "floor")
    groups = _group_by_label(examples)
    out = list(examples)
    for label, members in groups.items():
        n = len(members)
        for i in range(n, floor):
            out.append(members[i % n])
    return out


def _largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [n * f for f in fractions]
    counts = [math.floor(q) for q in quotas]
    remainders = [q - c for q, c in zip(quotas, counts)]
    # Ties go to the earlier split (train before validation before test).
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in range(n - sum(counts)):
        counts[order[i % len(order)]] += 1
    return counts


def split(
    examples: Sequence[LabeledExample],
    fractions: Sequence[float] = (0.80, 0.10, 0.10),
    seed: int = 0,
) -> DatasetSplit:
    """Stratified train/validation/test split.

    Each class is shuffled with the seed and partitioned with
    largest-remainder rounding, so per-class counts are within one example
    of the exact quota and the whole split is deterministic.
    """
    fracs = check_fractions(fractions)
    rng = np.random.default_rng(seed)
    parts: tuple[list[LabeledExample], ...] = ([], [], [])
    for label, members in _group_by_label(examples).items():
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        counts = _largest_remainder(len(members), fracs)
        start = 0
        for part, count in zip(parts, counts):
            part.extend(shuffled[start : start + count])
            start += count
    return DatasetSplit(train=parts[0], validation=parts[1], test=parts[2], fractions=fracs)


def examples_to_xy(examples: Sequence[LabeledExample]) -> tuple[list[Product], list[str]]:
    """Unzip labeled examples into the (X, y) shape the estimators take."""
    return [ex.product for ex in examples], [ex.label for ex in examples]

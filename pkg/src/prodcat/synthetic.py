"""Synthetic corpora for desk-scale experiments.

The real catalogs this pipeline targets are proprietary, so every experiment
here runs on generated data with controllable signal:

* `generate_corpus` - classes with title vocabularies of adjustable overlap
  and, optionally, class-identifying structured attributes. Signal comes in
  three kinds: an attribute whose presence names the class, an attribute
  whose value names the class, and paired classes distinguishable only by
  how names and values are paired (their token multisets are identical, so
  averaging embeddings cannot separate them but convolution over name-value
  adjacency can).
* `confusable_corpus` - two branches whose leaves interleave feature
  combinations, so branch membership is a nonlinear function of tokens while
  each leaf stays easy: hard for a per-node linear classifier at the root,
  easy for a flat model.
* `separator_collision_corpus` - attribute values that collide with other
  attributes' names, so serializations without a separator token manufacture
  spurious name-value bigrams across attribute boundaries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import LabeledExample, Product, Taxonomy, write_corpus

_COLORS = ["white", "black", "red", "blue", "green", "ivory", "navy", "teal"]
_BRANDS = [f"brand{i:02d}" for i in range(20)]


@dataclass
class SyntheticSpec:
    """Knobs for the standard generator."""

    classes: int = 50
    per_class: int = 200
    title_overlap: float = 0.0
    attr_signal: str = "strong"  # strong | none
    seed: int = 0
    shared_vocab: int = 120
    class_vocab: int = 16
    title_len: tuple[int, int] = (5, 9)
    desc_len: tuple[int, int] = (8, 14)

    def __post_init__(self):
        if self.classes < 2 or self.per_class < 1:
            raise ValueError("need classes >= 2 and per_class >= 1")
        if not 0.0 <= self.title_overlap <= 1.0:
            raise ValueError(f"title_overlap must be in [0, 1], got {self.title_overlap}")
        if self.attr_signal not in ("strong", "none"):
            raise ValueError(f"attr_signal must be 'strong' or 'none', got {self.attr_signal}")


@dataclass
class SyntheticCorpus:
    examples: list[LabeledExample]
    taxonomy: Taxonomy
    truth: dict = field(default_factory=dict)

    def write(self, outdir: str | Path) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_corpus(self.examples, outdir / "corpus.jsonl")
        self.taxonomy.save(outdir / "taxonomy.txt")
        with open(outdir / "truth.json", "w", encoding="utf-8") as fh:
            json.dump(self.truth, fh, indent=2, sort_keys=True)


def _sample_text(rng, length_range, shared, specific, overlap) -> str:
    length = int(rng.integers(length_range[0], length_range[1] + 1))
    tokens = []
    for _ in range(length):
        if specific and rng.random() >= overlap:
            tokens.append(specific[int(rng.integers(len(specific)))])
        else:
            tokens.append(shared[int(rng.integers(len(shared)))])
    return " ".join(tokens)


def _signal_plan(spec: SyntheticSpec) -> list[dict]:
    """Assign each class its structured-attribute signal."""
    plan = [dict() for _ in range(spec.classes)]
    if spec.attr_signal == "none":
        for i in range(spec.classes):
            plan[i] = {"kind": "none", "attrs": []}
        return plan
    paired: list[int] = []
    for i in range(spec.classes):
        mode = i % 3
        if mode == 0:
            plan[i] = {"kind": "presence", "attrs": [(f"flag{i:03d}", "y")]}
        elif mode == 1:
            plan[i] = {"kind": "value", "attrs": [("kind", f"kv{i:03d}")]}
        else:
            paired.append(i)
    for slot in range(0, len(paired) - 1, 2):
        a, b = paired[slot], paired[slot + 1]
        pair = slot // 2
        n1, n2 = f"paira{pair:03d}", f"pairb{pair:03d}"
        u, v = f"pu{pair:03d}", f"pv{pair:03d}"
        plan[a] = {"kind": "paired", "attrs": [(n1, u), (n2, v)], "partner": b}
        plan[b] = {"kind": "paired", "attrs": [(n1, v), (n2, u)], "partner": a}
    if len(paired) % 2:
        i = paired[-1]
        plan[i] = {"kind": "value", "attrs": [("kind", f"kv{i:03d}")]}
    return plan


def generate_corpus(spec: SyntheticSpec) -> SyntheticCorpus:
    """Products with class-dependent titles and structured attributes.

    Title tokens are drawn from a shared pool with probability
    `title_overlap` and from a class-specific pool otherwise; overlap 1.0
    makes titles uninformative. With `attr_signal="strong"` every class
    carries an identifying structured attribute per `_signal_plan`.
    """
    rng = np.random.default_rng(spec.seed)
    labels = [f"pt_{i:03d}" for i in range(spec.classes)]
    branches = max(2, math.isqrt(spec.classes))
    per_branch = math.ceil(spec.classes / branches)
    paths = [
        ("catalog", f"cat_{i // per_branch:02d}", label) for i, label in enumerate(labels)
    ]
    taxonomy = Taxonomy(paths)
    shared = [f"w{j:03d}" for j in range(spec.shared_vocab)]
    class_tokens = [
        [f"t{i:03d}x{j}" for j in range(spec.class_vocab)] for i in range(spec.classes)
    ]
    plan = _signal_plan(spec)

    examples: list[LabeledExample] = []
    counter = 0
    for i, label in enumerate(labels):
        for _ in range(spec.per_class):
            attrs: list[tuple[str, str]] = [
                ("color", _COLORS[int(rng.integers(len(_COLORS)))]),
                ("brand", _BRANDS[int(rng.integers(len(_BRANDS)))]),
            ]
            attrs.extend(plan[i]["attrs"])
            order = rng.permutation(len(attrs))
            product = Product(
                id=f"p{counter:07d}",
                unstructured={
                    "product_name": _sample_text(
                        rng, spec.title_len, shared, class_tokens[i], spec.title_overlap
                    ),
                    "product_short_description": _sample_text(
                        rng, spec.desc_len, shared, class_tokens[i], spec.title_overlap
                    ),
                },
                structured=[attrs[j] for j in order],
            )
            examples.append(LabeledExample(product=product, label=label))
            counter += 1
    truth = {
        "generator": "standard",
        "classes": spec.classes,
        "per_class": spec.per_class,
        "title_overlap": spec.title_overlap,
        "attr_signal": spec.attr_signal,
        "per_label": {
            label: {k: v for k, v in plan[i].items() if k != "attrs"}
            | {"attrs": [list(pair) for pair in plan[i]["attrs"]]}
            for i, label in enumerate(labels)
        },
    }
    return SyntheticCorpus(examples=examples, taxonomy=taxonomy, truth=truth)


def confusable_corpus(per_class: int = 150, seed: int = 0) -> SyntheticCorpus:
    """Shoe-like leaves whose branch grouping is a nonlinear token function.

    Leaves carry feature tokens: one branch holds the classes marked by
    exactly one of {cushioned, strap}, the other branch the classes marked by
    both or neither. A linear root classifier over bag-of-words must solve
    XOR and fails; per-leaf discrimination stays trivial.
    """
    leaves = {
        "running_shoes": ("sports_outdoor", ("cushioned",)),
        "ballet_shoes": ("sports_outdoor", ("strap",)),
        "loafers": ("apparel", ("cushioned", "strap")),
        "work_boots": ("apparel", ()),
    }
    rng = np.random.default_rng(seed)
    shared = [
        "shoes", "comfort", "leather", "size", "rubber", "sole", "lace", "wear",
        "classic", "fit", "durable", "style", "pair", "unisex", "walking", "grip",
    ]
    taxonomy = Taxonomy([("catalog", branch, leaf) for leaf, (branch, _) in leaves.items()])
    examples: list[LabeledExample] = []
    counter = 0
    for leaf, (_, markers) in leaves.items():
        for _ in range(per_class):
            tokens = [shared[int(rng.integers(len(shared)))] for _ in range(6)]
            for marker in markers:
                tokens.insert(int(rng.integers(len(tokens) + 1)), marker)
            product = Product(
                id=f"shoe{counter:06d}",
                unstructured={
                    "product_name": " ".join(tokens),
                    "product_short_description": _sample_text(rng, (6, 10), shared, [], 1.0),
                },
                structured=[],
            )
            examples.append(LabeledExample(product=product, label=leaf))
            counter += 1
    truth = {
        "generator": "confusable",
        "per_class": per_class,
        "markers": {leaf: list(markers) for leaf, (_, markers) in leaves.items()},
    }
    return SyntheticCorpus(examples=examples, taxonomy=taxonomy, truth=truth)


def separator_collision_corpus(
    per_class: int = 200, pairs: int = 2, seed: int = 0
) -> SyntheticCorpus:
    """Class pairs whose attribute values collide with the partner's names.

    Within a pair, class A's identifying attribute is (na, va) and class B's
    is (nb, vb); A additionally carries nb and vb split across two filler
    attributes (and B vice versa), so unigram content is identical across the
    pair. Without separators, random attribute order juxtaposes the filler
    attributes in roughly a third of serializations, manufacturing the
    partner's name-value bigram; with separators the boundary token keeps
    every bigram honest.
    """
    if pairs < 1 or per_class < 1:
        raise ValueError("need pairs >= 1 and per_class >= 1")
    rng = np.random.default_rng(seed)
    shared = [f"s{j:02d}" for j in range(20)]
    labels: list[str] = []
    attr_sets: list[list[tuple[str, str]]] = []
    for p in range(pairs):
        na, va = f"na{p}", f"va{p}"
        nb, vb = f"nb{p}", f"vb{p}"
        filler, tail = f"px{p}", f"qx{p}"
        labels.extend([f"pair{p}_a", f"pair{p}_b"])
        attr_sets.append([(na, va), (filler, nb), (vb, tail)])
        attr_sets.append([(nb, vb), (filler, na), (va, tail)])
    taxonomy = Taxonomy([("catalog", label) for label in labels])
    examples: list[LabeledExample] = []
    counter = 0
    for label, attrs in zip(labels, attr_sets):
        for _ in range(per_class):
            order = rng.permutation(len(attrs))
            product = Product(
                id=f"col{counter:06d}",
                unstructured={"product_name": _sample_text(rng, (4, 7), shared, [], 1.0)},
                structured=[attrs[j] for j in order],
            )
            examples.append(LabeledExample(product=product, label=label))
            counter += 1
    truth = {
        "generator": "separator_collision",
        "per_class": per_class,
        "pairs": pairs,
        "signatures": {
            label: list(attrs[0]) for label, attrs in zip(labels, attr_sets)
        },
    }
    return SyntheticCorpus(examples=examples, taxonomy=taxonomy, truth=truth)

"""Hierarchical per-node baseline classifier.

One multinomial logistic-regression classifier sits at every taxonomy node
with at least two children, consuming a hashed bag-of-words over the
product's unstructured text. A prediction walks the tree root-to-leaf with
beam search; a path's score is the product of the node-conditional
probabilities along it, so with a beam as wide as the leaf set the search
degenerates to exhaustive enumeration.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import log_expit, logsumexp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from . import configfile
from .catalog import PATH_SEP, Product, Taxonomy
from .checkpoint import load_checkpoint, save_checkpoint
from .text import tokenize
from .validation import check_consistent_length

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_FNV_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; stable across processes and platforms."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _FNV_MASK
    return h


def hashed_bow(product: Product, hash_dim: int) -> dict[int, int]:
    """Sparse token-count vector over all unstructured text, bucketed by a
    stable 64-bit hash mod `hash_dim`. Colliding tokens sum their counts."""
    if hash_dim < 2:
        raise ValueError(f"hash_dim must be >= 2, got {hash_dim}")
    counts: dict[int, int] = {}
    for text in product.unstructured.values():
        for token in tokenize(text):
            bucket = fnv1a64(token.encode("utf-8")) % hash_dim
            counts[bucket] = counts.get(bucket, 0) + 1
    return counts


def bow_matrix(products: Sequence[Product], hash_dim: int) -> sp.csr_matrix:
    """CSR feature matrix of hashed bag-of-words rows."""
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for product in products:
        counts = hashed_bow(product, hash_dim)
        for bucket in sorted(counts):
            indices.append(bucket)
            data.append(float(counts[bucket]))
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), indices, indptr),
        shape=(len(products), hash_dim),
    )


@dataclass
class NodeModel:
    """Classifier for one taxonomy node: which child subtree a product
    belongs to. A node that saw training examples for only one child is
    degenerate and predicts that child with probability one."""

    children: list[str]
    coef: np.ndarray | None = None
    intercept: np.ndarray | None = None

    @property
    def degenerate(self) -> bool:
        return self.coef is None

    def log_proba(self, features: sp.csr_matrix) -> np.ndarray:
        """[B, len(children)] log-probabilities, columns in children order."""
        n = features.shape[0]
        if self.degenerate:
            return np.zeros((n, 1))
        scores = features @ self.coef.T + self.intercept
        if len(self.children) == 2:
            z = scores[:, 0]
            return np.stack([log_expit(-z), log_expit(z)], axis=1)
        return scores - logsumexp(scores, axis=1, keepdims=True)


class HierarchicalClassifier(BaseEstimator, ClassifierMixin):
    """Per-node logistic regression over hashed bag-of-words features.

    Parameters
    ----------
    taxonomy : Taxonomy
        The tree whose leaves are the class labels. Required before fit.
    hash_dim : int
        Bag-of-words bucket count; must be a power of two.
    l2 : float
        L2 penalty weight on the mean log-loss objective.
    max_iter : int
        Optimizer iteration budget per node.
    beam : int
        Default beam width for top-k queries.
    """

    def __init__(
        self,
        taxonomy: Taxonomy | None = None,
        hash_dim: int = 2**18,
        l2: float = 1e-4,
        max_iter: int = 200,
        beam: int = 10,
        seed: int = 0,
    ):
        self.taxonomy = taxonomy
        self.hash_dim = hash_dim
        self.l2 = l2
        self.max_iter = max_iter
        self.beam = beam
        self.seed = seed

    def _check_config(self) -> Taxonomy:
        if self.taxonomy is None:
            raise ValueError("a taxonomy is required to fit or load this classifier")
        if self.hash_dim < 2 or self.hash_dim & (self.hash_dim - 1):
            raise ValueError(f"hash_dim must be a power of two >= 2, got {self.hash_dim}")
        return self.taxonomy

    def fit(self, X: Sequence[Product], y: Sequence[str]):
        taxonomy = self._check_config()
        check_consistent_length(X, y)
        if len(X) == 0:
            raise ValueError("fit needs at least one example")
        paths = [taxonomy.path_to(label) for label in y]  # validates labels as leaves
        self.classes_ = sorted(set(y))
        features = bow_matrix(X, self.hash_dim)

        # Bucket example indices by every internal node on their true path.
        node_rows: dict[str, list[int]] = {}
        node_targets: dict[str, list[str]] = {}
        for row, path in enumerate(paths):
            for depth in range(len(path) - 1):
                node = PATH_SEP.join(path[: depth + 1])
                if len(taxonomy.children(node)) < 2:
                    continue  # single-child chain: nothing to decide
                node_rows.setdefault(node, []).append(row)
                node_targets.setdefault(node, []).append(path[depth + 1])

        self.node_models_: dict[str, NodeModel] = {}
        for node, rows in node_rows.items():
            targets = node_targets[node]
            present = sorted(set(targets))
            if len(present) == 1:
                self.node_models_[node] = NodeModel(children=present)
                continue
            clf = LogisticRegression(
                C=1.0 / (self.l2 * len(rows)),
                solver="lbfgs",
                max_iter=self.max_iter,
                random_state=self.seed,
            )
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                clf.fit(features[rows], targets)
            self.node_models_[node] = NodeModel(
                children=list(clf.classes_),
                coef=clf.coef_.astype(np.float32),
                intercept=clf.intercept_.astype(np.float32),
            )
        return self

    def _check_fitted(self):
        if not hasattr(self, "node_models_"):
            raise RuntimeError("this HierarchicalClassifier instance is not fitted yet")

    def _expand(self, node_path: tuple[str, ...], feature_row: sp.csr_matrix) -> list[tuple[str, float]]:
        """(child name, conditional log-probability) pairs for one node."""
        taxonomy = self.taxonomy
        node = PATH_SEP.join(node_path)
        children = taxonomy.children(node)
        if len(children) == 1:
            return [(children[0], 0.0)]
        model = self.node_models_.get(node)
        if model is None:
            # No training examples reached this node; spread mass uniformly.
            return [(child, -math.log(len(children))) for child in children]
        logps = model.log_proba(feature_row)[0]
        return list(zip(model.children, (float(v) for v in logps)))

    def predict_topk(
        self, X: Sequence[Product], k: int = 3, beam: int | None = None
    ) -> list[list[tuple[str, float]]]:
        """k best leaves per product by path probability, via level-synchronous
        beam search. With beam >= number of leaves this is exhaustive."""
        self._check_fitted()
        taxonomy = self._check_config()
        beam = self.beam if beam is None else beam
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if beam < k:
            raise ValueError(f"beam ({beam}) must be >= k ({k})")
        features = bow_matrix(X, self.hash_dim)
        results = []
        for row in range(features.shape[0]):
            feature_row = features[row]
            frontier: list[tuple[float, tuple[str, ...]]] = [(0.0, (taxonomy.root,))]
            while any(not taxonomy.is_leaf(path[-1]) for _, path in frontier):
                new_frontier: list[tuple[float, tuple[str, ...]]] = []
                for logp, path in frontier:
                    if taxonomy.is_leaf(path[-1]):
                        new_frontier.append((logp, path))
                        continue
                    for child, step in self._expand(path, feature_row):
                        new_frontier.append((logp + step, path + (child,)))
                new_frontier.sort(key=lambda item: (-item[0], item[1]))
                frontier = new_frontier[:beam]
            ranked = sorted(frontier, key=lambda item: (-item[0], item[1][-1]))
            results.append([(path[-1], math.exp(logp)) for logp, path in ranked[:k]])
        return results

    def predict(self, X: Sequence[Product]) -> list[str]:
        return [ranked[0][0] for ranked in self.predict_topk(X, k=1, beam=max(1, self.beam))]

    def per_level_error_fractions(self, X: Sequence[Product], y: Sequence[str]) -> dict[int, float]:
        """Fraction of examples whose true path is left at each tree depth.

        Walks every example's true path and checks, at each decision node,
        whether that node's classifier picks the true child. Depth 0 is the
        root decision.
        """
        self._check_fitted()
        taxonomy = self._check_config()
        check_consistent_length(X, y)
        features = bow_matrix(X, self.hash_dim)
        errors: dict[int, int] = {}
        decisions: dict[int, int] = {}
        for row, label in enumerate(y):
            path = taxonomy.path_to(label)
            for depth in range(len(path) - 1):
                if len(taxonomy.children(PATH_SEP.join(path[: depth + 1]))) < 2:
                    continue
                expansion = self._expand(path[: depth + 1], features[row])
                best = max(expansion, key=lambda cs: (cs[1], cs[0]))[0]
                decisions[depth] = decisions.get(depth, 0) + 1
                if best != path[depth + 1]:
                    errors[depth] = errors.get(depth, 0) + 1
        return {
            depth: errors.get(depth, 0) / len(X) for depth in sorted(decisions)
        }

    # -- persistence ----------------------------------------------------------

    def _config_hash(self) -> str:
        doc = {"model_type": "hierarchical", "hash_dim": self.hash_dim, "l2": self.l2}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()

    def save(self, directory: str | Path) -> None:
        """Write manifest, taxonomy, per-node children lists, and weight blocks
        keyed by node path."""
        self._check_fitted()
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.taxonomy.save(directory / "taxonomy.txt")
        with open(directory / "classes.txt", "w", encoding="utf-8") as fh:
            fh.writelines(label + "\n" for label in self.classes_)
        with open(directory / "nodes.txt", "w", encoding="utf-8") as fh:
            for node, model in sorted(self.node_models_.items()):
                fh.write(f"{node}\t{','.join(model.children)}\n")
        arrays: dict[str, np.ndarray] = {}
        for node, model in self.node_models_.items():
            if not model.degenerate:
                arrays[f"node/{node}/coef"] = model.coef
                arrays[f"node/{node}/intercept"] = model.intercept
        save_checkpoint(directory / "checkpoint.bin", arrays, config_hash=self._config_hash())
        configfile.write_kv(
            directory / "manifest.txt",
            {
                "model_type": "hierarchical",
                "hash_dim": self.hash_dim,
                "l2": self.l2,
                "max_iter": self.max_iter,
                "beam": self.beam,
                "seed": self.seed,
                "taxonomy": "taxonomy.txt",
                "classes_file": "classes.txt",
                "nodes": "nodes.txt",
                "checkpoint": "checkpoint.bin",
            },
        )

    @classmethod
    def load(cls, directory: str | Path) -> "HierarchicalClassifier":
        directory = Path(directory)
        manifest = configfile.read_kv(directory / "manifest.txt")
        if manifest.get("model_type") != "hierarchical":
            raise ValueError(f"{directory}: not a hierarchical model directory")
        est = cls(
            taxonomy=Taxonomy.load(directory / manifest["taxonomy"]),
            hash_dim=int(manifest["hash_dim"]),
            l2=float(manifest["l2"]),
            max_iter=int(manifest["max_iter"]),
            beam=int(manifest["beam"]),
            seed=int(manifest["seed"]),
        )
        with open(directory / manifest["classes_file"], "r", encoding="utf-8") as fh:
            est.classes_ = [line.rstrip("\n") for line in fh if line.strip()]
        arrays, _ = load_checkpoint(
            directory / manifest["checkpoint"], expected_hash=est._config_hash()
        )
        est.node_models_ = {}
        with open(directory / manifest["nodes"], "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                node, _, children_text = line.rstrip("\n").partition("\t")
                children = children_text.split(",")
                coef = arrays.get(f"node/{node}/coef")
                intercept = arrays.get(f"node/{node}/intercept")
                est.node_models_[node] = NodeModel(
                    children=children, coef=coef, intercept=intercept
                )
        return est

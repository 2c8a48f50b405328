"""Shared fixtures-in-code for the test suite."""

import math

from prodcat.catalog import Product
from prodcat.hierarchy import HierarchicalClassifier, bow_matrix
from prodcat.models import STRUCTURED_KEY, MultiCnnClassifier, init_parameters
from prodcat.text import build_attribute_dictionary, build_dictionary


def tiny_products(n=24, classes=("shirt", "lamp")):
    """Separable toy corpus: titles and one structured attribute name the class."""
    vocab = {
        "shirt": ("soft cotton shirt for summer", [("sleeve", "short"), ("fit", "relaxed")]),
        "lamp": ("bright led desk lamp light", [("wattage", "ten"), ("base", "steel")]),
    }
    X, y = [], []
    for i in range(n):
        label = classes[i % len(classes)]
        title, attrs = vocab[label]
        X.append(
            Product(
                id=f"p{i}",
                unstructured={"product_name": title, "product_short_description": f"{label} item"},
                structured=list(attrs),
            )
        )
        y.append(label)
    return X, y


def untrained_classifier(X, classes, **overrides) -> MultiCnnClassifier:
    """Assemble an initialized-but-untrained model over a corpus's dictionaries."""
    kwargs = dict(
        channels=(("product_name", 8, 200),),
        structured_mode="conv",
        widths=(1, 2, 3),
        filters_per_width=4,
        embed_dim=8,
        fc_sizes=(16,),
        structured_max_len=24,
        structured_dict_size=200,
        seed=0,
    )
    kwargs.update(overrides)
    est = MultiCnnClassifier(**kwargs)
    config = est._build_config(num_classes=len(classes))
    dicts = {}
    for ch in config.channels:
        dicts[ch.attribute] = build_dictionary((p.text(ch.attribute) for p in X), ch.dict_size)
    if config.structured_mode != "none":
        dicts[STRUCTURED_KEY] = build_attribute_dictionary(X, config.structured_dict_size)
    params = init_parameters(config, {k: len(dicts[k]) for k in config.channel_keys()}, seed=est.seed)
    return est._bind(config, dicts, sorted(classes), {k: p.data for k, p in params.items()})


def exhaustive_topk(model: HierarchicalClassifier, X, k):
    """Independent oracle: depth-first enumeration of every root-to-leaf path,
    scoring each with the same node conditionals the beam search uses but with
    no pruning at all."""
    taxonomy = model.taxonomy
    features = bow_matrix(X, model.hash_dim)
    results = []
    for row in range(features.shape[0]):
        feature_row = features[row]
        complete = []

        def walk(path, logp):
            if taxonomy.is_leaf(path[-1]):
                complete.append((logp, path))
                return
            for child, step in model._expand(path, feature_row):
                walk(path + (child,), logp + step)

        walk((taxonomy.root,), 0.0)
        complete.sort(key=lambda item: (-item[0], item[1][-1]))
        results.append([(path[-1], math.exp(logp)) for logp, path in complete[:k]])
    return results

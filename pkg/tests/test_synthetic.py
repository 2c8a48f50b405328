from collections import Counter

import pytest

from prodcat.catalog import examples_to_xy, ingest
from prodcat.synthetic import (
    SyntheticSpec,
    confusable_corpus,
    generate_corpus,
    separator_collision_corpus,
)
from prodcat.text import SEP_TOKEN, serialize_structured, tokenize


class TestStandardGenerator:
    def test_counts(self):
        corpus = generate_corpus(SyntheticSpec(classes=50, per_class=200, seed=1))
        assert len(corpus.examples) == 10_000
        assert len(corpus.taxonomy.leaves) == 50
        per_label = Counter(ex.label for ex in corpus.examples)
        assert set(per_label.values()) == {200}

    def test_zero_overlap_titles_are_class_specific(self):
        corpus = generate_corpus(SyntheticSpec(classes=4, per_class=30, title_overlap=0.0, seed=2))
        token_owners: dict[str, set[str]] = {}
        for ex in corpus.examples:
            for token in tokenize(ex.product.text("product_name")):
                token_owners.setdefault(token, set()).add(ex.label)
        assert all(len(owners) == 1 for owners in token_owners.values())

    def test_full_overlap_titles_share_one_pool(self):
        corpus = generate_corpus(SyntheticSpec(classes=4, per_class=30, title_overlap=1.0, seed=3))
        for ex in corpus.examples:
            assert all(t.startswith("w") for t in tokenize(ex.product.text("product_name")))

    def test_strong_signal_attrs_present(self):
        corpus = generate_corpus(SyntheticSpec(classes=9, per_class=5, seed=4))
        truth = corpus.truth["per_label"]
        for ex in corpus.examples:
            expected = [tuple(p) for p in truth[ex.label]["attrs"]]
            assert set(expected) <= set(ex.product.structured)

    def test_none_signal_has_only_noise_attrs(self):
        corpus = generate_corpus(SyntheticSpec(classes=4, per_class=5, attr_signal="none", seed=5))
        for ex in corpus.examples:
            assert {name for name, _ in ex.product.structured} == {"color", "brand"}

    def test_paired_classes_have_identical_signal_token_multisets(self):
        corpus = generate_corpus(SyntheticSpec(classes=12, per_class=2, seed=6))
        truth = corpus.truth["per_label"]
        paired = {label: info for label, info in truth.items() if info["kind"] == "paired"}
        assert paired, "the plan should assign some paired classes"
        labels = list(truth)
        for label, info in paired.items():
            partner = labels[info["partner"]]
            mine = Counter(t for pair in info["attrs"] for t in pair)
            theirs = Counter(t for pair in truth[partner]["attrs"] for t in pair)
            assert mine == theirs  # word averaging cannot tell them apart

    def test_deterministic_per_seed(self):
        a = generate_corpus(SyntheticSpec(classes=4, per_class=10, seed=9))
        b = generate_corpus(SyntheticSpec(classes=4, per_class=10, seed=9))
        assert [e.product.to_record(e.label) for e in a.examples] == [
            e.product.to_record(e.label) for e in b.examples
        ]

    def test_written_corpus_round_trips_through_ingest(self, tmp_path):
        corpus = generate_corpus(SyntheticSpec(classes=4, per_class=6, seed=10))
        corpus.write(tmp_path)
        examples = ingest(tmp_path / "corpus.jsonl", corpus.taxonomy)
        assert len(examples) == len(corpus.examples)
        X, y = examples_to_xy(examples)
        assert y == [e.label for e in corpus.examples]

    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec(classes=1)
        with pytest.raises(ValueError):
            SyntheticSpec(title_overlap=1.5)
        with pytest.raises(ValueError):
            SyntheticSpec(attr_signal="weird")


class TestConfusableGenerator:
    def test_xor_structure(self):
        corpus = confusable_corpus(per_class=10, seed=0)
        markers = corpus.truth["markers"]
        assert markers["loafers"] == ["cushioned", "strap"]
        assert markers["work_boots"] == []
        by_branch = {}
        for leaf in corpus.taxonomy.leaves:
            branch = corpus.taxonomy.path_to(leaf)[1]
            by_branch.setdefault(branch, []).append(set(markers[leaf]))
        # each branch holds one single-marker class... no: one branch holds the
        # two single-marker leaves, the other holds both-markers and neither.
        sizes = sorted(tuple(sorted(len(m) for m in v)) for v in by_branch.values())
        assert sizes == [(0, 2), (1, 1)]

    def test_markers_present_in_titles(self):
        corpus = confusable_corpus(per_class=5, seed=1)
        markers = corpus.truth["markers"]
        for ex in corpus.examples:
            tokens = set(tokenize(ex.product.text("product_name")))
            assert set(markers[ex.label]) <= tokens
            for other, other_markers in markers.items():
                if other != ex.label and set(other_markers) == set(markers[ex.label]):
                    pytest.fail("marker sets must uniquely identify leaves")


class TestSeparatorCollisionGenerator:
    def test_unigram_sets_match_within_pair(self):
        corpus = separator_collision_corpus(per_class=3, pairs=2, seed=0)
        by_label = {}
        for ex in corpus.examples:
            tokens = frozenset(
                t
                for t in tokenize(serialize_structured(ex.product, with_separator=False))
            )
            by_label.setdefault(ex.label, set()).add(tokens)
        for p in range(2):
            a_sets = by_label[f"pair{p}_a"]
            b_sets = by_label[f"pair{p}_b"]
            assert a_sets == b_sets  # unigrams carry no class signal

    def test_boundary_bigrams_leak_only_without_separator(self):
        corpus = separator_collision_corpus(per_class=40, pairs=1, seed=1)
        signature = {
            label: tuple(sig) for label, sig in corpus.truth["signatures"].items()
        }
        leaked = 0
        for ex in corpus.examples:
            if ex.label != "pair0_a":
                continue
            partner_sig = signature["pair0_b"]
            without = tokenize(serialize_structured(ex.product, with_separator=False))
            bigrams = set(zip(without, without[1:]))
            if partner_sig in bigrams:
                leaked += 1
            with_sep = tokenize(serialize_structured(ex.product, with_separator=True))
            sep_bigrams = {
                pair for pair in zip(with_sep, with_sep[1:]) if SEP_TOKEN not in pair
            }
            assert partner_sig not in sep_bigrams
            assert signature["pair0_a"] in sep_bigrams
        assert leaked > 0  # random attribute order juxtaposes the fillers sometimes

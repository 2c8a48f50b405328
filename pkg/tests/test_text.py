import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prodcat.catalog import Product
from prodcat.text import (
    MIN_ENCODED_LEN,
    PAD_INDEX,
    SEP_INDEX,
    SEP_TOKEN,
    UNK_INDEX,
    Dictionary,
    build_attribute_dictionary,
    build_dictionary,
    encode,
    naturalize,
    serialize_structured,
    tokenize,
)

WOMENS_TOP_SERIALIZED = (
    "assembled product weight 0.5 pounds __sep__ color white __sep__ "
    "clothing size type regular __sep__ maternity n __sep__ "
    "clothing size group women __sep__ age demographic women __sep__ "
    "brand rails __sep__ fabric material jersey __sep__ clothing size s __sep__ "
    "style sleeve long sleeves __sep__ actual color white navy sky __sep__ "
    "country of origin assembly cn __sep__ personalizable n"
)


class TestTokenize:
    def test_product_title(self):
        tokens = tokenize("Rails Womens Plaid Spread Collar Button Down Top")
        assert tokens == ["rails", "womens", "plaid", "spread", "collar", "button", "down", "top"]
        assert len(tokens) == 8

    def test_empty(self):
        assert tokenize("") == []

    def test_whitespace_runs(self):
        assert tokenize("  a \t b  ") == ["a", "b"]
        assert tokenize("\n\nx y\n") == ["x", "y"]


class TestNaturalize:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            ("fabric_material", "fabric material"),
            ("style_sleeve", "style sleeve"),
            ("abc", "abc"),
            ("country_of_origin_assembly", "country of origin assembly"),
            ("multi-part/slash", "multi part slash"),
            ("UPPER_Case", "upper case"),
            ("a__b", "a b"),
        ],
    )
    def test_examples(self, raw, expected):
        assert naturalize(raw) == expected


class TestSerializeStructured:
    def test_full_product(self, womens_top_product):
        assert serialize_structured(womens_top_product) == WOMENS_TOP_SERIALIZED

    def test_without_separator(self, womens_top_product):
        text = serialize_structured(womens_top_product, with_separator=False)
        assert SEP_TOKEN not in text
        assert text.startswith("assembled product weight 0.5 pounds color white")

    def test_no_attributes(self):
        assert serialize_structured(Product(id="x")) == ""

    def test_single_attribute_no_dangling_separator(self):
        product = Product(id="x", structured=[("color", "red")])
        assert serialize_structured(product) == "color red"

    @given(st.integers(min_value=1, max_value=8))
    @settings(max_examples=20, deadline=None)
    def test_separator_count(self, n_attrs):
        product = Product(id="x", structured=[(f"n{i}", f"v{i}") for i in range(n_attrs)])
        text = serialize_structured(product, with_separator=True)
        assert text.split().count(SEP_TOKEN) == n_attrs - 1


class TestBuildDictionary:
    def test_frequency_trimming(self):
        d = build_dictionary(["a a b", "a c"], max_size=4)
        assert len(d) == 4
        assert "a" in d and "b" not in d and "c" not in d
        assert d.frequencies[d.token_to_index["a"]] == 3

    def test_reserved_only(self):
        d = build_dictionary(["a a b"], max_size=3)
        assert len(d) == 3
        assert d.index_to_token == ["__pad__", "__unk__", "__sep__"]

    def test_lexicographic_tie_break(self):
        d = build_dictionary(["b c a"], max_size=5)
        # all frequency 1: 'a' and 'b' win the two slots
        assert "a" in d and "b" in d and "c" not in d

    def test_oversized_vocabulary_trims_to_cap(self):
        n_tokens = 500_001
        cap = 500_000
        corpus = (f"tok{i}" for i in range(n_tokens))
        d = build_dictionary(corpus, max_size=cap)
        assert len(d) == cap

    def test_reserved_literal_in_corpus_not_duplicated(self):
        d = build_dictionary(["__sep__ __sep__ word"], max_size=10)
        assert d.token_to_index["__sep__"] == SEP_INDEX
        assert d.index_to_token.count("__sep__") == 1

    @given(
        texts=st.lists(
            st.text(alphabet="abcdef ", min_size=0, max_size=30), min_size=0, max_size=10
        ),
        size_a=st.integers(min_value=3, max_value=12),
        extra=st.integers(min_value=0, max_value=6),
    )
    @settings(max_examples=60, deadline=None)
    def test_monotonic_in_max_size(self, texts, size_a, extra):
        small = build_dictionary(texts, max_size=size_a)
        large = build_dictionary(texts, max_size=size_a + extra)
        assert set(small.index_to_token) <= set(large.index_to_token)


class TestAttributeDictionary:
    def test_name_tokens_survive_trimming(self):
        products = [
            Product(id=str(i), structured=[("color", f"shade{i} tone{i} hue{i}")])
            for i in range(50)
        ]
        d = build_attribute_dictionary(products, max_size=5)
        assert "color" in d  # guaranteed despite tiny capacity

    def test_no_products(self):
        d = build_attribute_dictionary([], max_size=100_000)
        assert len(d) == 3

    def test_capacity_error_names_minimum(self):
        products = [Product(id="1", structured=[("alpha beta gamma delta", "v")])]
        with pytest.raises(ValueError, match="at least 7"):
            build_attribute_dictionary(products, max_size=5)

    def test_values_fill_remainder_by_frequency(self):
        products = [
            Product(id=str(i), structured=[("kind", "common common rare" if i else "common")])
            for i in range(3)
        ]
        d = build_attribute_dictionary(products, max_size=5)
        assert "kind" in d and "common" in d and "rare" not in d

    def test_serialized_separator_never_unknown(self, womens_top_product):
        d = build_attribute_dictionary([womens_top_product], max_size=100)
        seq = encode(serialize_structured(womens_top_product), d, max_len=256)
        assert SEP_INDEX in seq.indices
        assert UNK_INDEX not in seq.indices


class TestDictionaryFile:
    def test_round_trip_bit_exact(self, tmp_path):
        d = build_dictionary(["alpha beta beta gamma"], max_size=6)
        path = tmp_path / "tokens.dict"
        d.save(path)
        first = path.read_bytes()
        loaded = Dictionary.load(path)
        assert loaded == d
        loaded.save(path)
        assert path.read_bytes() == first

    def test_reserved_rows_first(self, tmp_path):
        d = build_dictionary(["x"], max_size=4)
        path = tmp_path / "tokens.dict"
        d.save(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "0\t__pad__\t0"
        assert lines[1] == "1\t__unk__\t0"
        assert lines[2] == "2\t__sep__\t0"


class TestEncode:
    def test_empty_text_pads_to_min_width(self):
        d = build_dictionary(["a"], max_size=4)
        seq = encode("", d, max_len=8)
        assert list(seq.indices) == [PAD_INDEX] * MIN_ENCODED_LEN
        assert seq.n_real == 0

    def test_unknown_token_maps_to_unk(self):
        d = build_dictionary(["a"], max_size=4)
        seq = encode("zzz", d, max_len=8)
        assert seq.indices[0] == UNK_INDEX

    def test_truncation_keeps_prefix(self):
        d = build_dictionary(["t0 t1 t2 t3 t4 t5 t6 t7 t8 t9"], max_size=16)
        seq = encode("t0 t1 t2 t3 t4 t5 t6 t7 t8 t9", d, max_len=4)
        assert seq.n_real == 4
        assert [d.index_to_token[i] for i in seq.indices[:4]] == ["t0", "t1", "t2", "t3"]
        assert len(seq.indices) == MIN_ENCODED_LEN

    def test_max_len_must_be_positive(self):
        d = build_dictionary([], max_size=3)
        with pytest.raises(ValueError):
            encode("a", d, max_len=0)

    @given(
        text=st.text(alphabet="abc xyz_-", min_size=0, max_size=60),
        max_len=st.integers(min_value=1, max_value=12),
    )
    @settings(max_examples=80, deadline=None)
    def test_all_indices_within_dictionary(self, text, max_len):
        d = build_dictionary(["a b c"], max_size=5)
        seq = encode(text, d, max_len=max_len)
        assert all(0 <= i < len(d) for i in seq.indices)
        assert seq.n_real <= max_len
        assert len(seq.indices) >= MIN_ENCODED_LEN

import json

import numpy as np
import pytest

import basketvec as bv
from basketvec import corpus
from basketvec.errors import ParseError, ValidationError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestParseJsonl:
    def test_field_mapping(self, tmp_path):
        path = _write(tmp_path / "t.jsonl",
                      '{"tx":"t1","user":"u9","items":["A","B"]}\n')
        baskets = bv.parse_transactions(path)
        assert baskets == [bv.Basket("t1", "u9", ("A", "B"))]

    def test_user_optional(self, tmp_path):
        path = _write(tmp_path / "t.jsonl", '{"tx":"t2","items":["A"]}\n')
        baskets = bv.parse_transactions(path)
        assert baskets[0].user_id is None
        assert baskets[0].items == ("A",)

    def test_malformed_line_number(self, tmp_path):
        path = _write(tmp_path / "t.jsonl",
                      '{"tx":"t1","items":["A"]}\nnot json\n')
        with pytest.raises(ParseError, match="line 2"):
            bv.parse_transactions(path)

    def test_empty_items_rejected(self, tmp_path):
        path = _write(tmp_path / "t.jsonl", '{"tx":"t1","items":[]}\n')
        with pytest.raises(ParseError, match="line 1"):
            bv.parse_transactions(path)

    def test_blank_lines_skipped(self, tmp_path):
        path = _write(tmp_path / "t.jsonl",
                      '\n{"tx":"t1","items":["A","B"]}\n\n')
        assert len(bv.parse_transactions(path)) == 1

    def test_empty_file_is_empty_list(self, tmp_path):
        assert bv.parse_transactions(_write(tmp_path / "t.jsonl", "")) == []

    def test_file_order_preserved(self, tmp_path):
        lines = [json.dumps({"tx": f"t{i}", "items": ["A", "B"]}) for i in range(5)]
        path = _write(tmp_path / "t.jsonl", "\n".join(lines) + "\n")
        assert [b.transaction_id for b in bv.parse_transactions(path)] == \
            [f"t{i}" for i in range(5)]


class TestParseCsv:
    HEADER = "transaction_id,user_id,product,position\n"

    def test_rows_grouped_and_position_sorted(self, tmp_path):
        path = _write(tmp_path / "t.csv", self.HEADER +
                      "t1,u1,B,2\nt1,u1,A,1\nt2,,C,1\nt2,,D,2\n")
        baskets = bv.parse_transactions(path, format="csv")
        assert baskets == [bv.Basket("t1", "u1", ("A", "B")),
                           bv.Basket("t2", None, ("C", "D"))]

    def test_transaction_order_is_first_appearance(self, tmp_path):
        path = _write(tmp_path / "t.csv", self.HEADER +
                      "t2,,A,1\nt1,,B,1\nt2,,C,2\n")
        assert [b.transaction_id for b in bv.parse_transactions(path, format="csv")] \
            == ["t2", "t1"]

    def test_conflicting_user_rejected(self, tmp_path):
        path = _write(tmp_path / "t.csv", self.HEADER + "t1,u1,A,1\nt1,u2,B,2\n")
        with pytest.raises(ParseError, match="conflicting user"):
            bv.parse_transactions(path, format="csv")

    def test_duplicate_position_rejected(self, tmp_path):
        path = _write(tmp_path / "t.csv", self.HEADER + "t1,u1,A,1\nt1,u1,B,1\n")
        with pytest.raises(ParseError, match="duplicate position"):
            bv.parse_transactions(path, format="csv")

    def test_wrong_header_rejected(self, tmp_path):
        path = _write(tmp_path / "t.csv", "a,b,c,d\nt1,u1,A,1\n")
        with pytest.raises(ParseError):
            bv.parse_transactions(path, format="csv")

    def test_unknown_format(self, tmp_path):
        path = _write(tmp_path / "t.xml", "<x/>")
        with pytest.raises(ValidationError):
            bv.parse_transactions(path, format="xml")


class TestFilterTrainable:
    def test_singletons_dropped(self):
        baskets = [bv.Basket("t1", None, ("A",)), bv.Basket("t2", None, ("A", "B"))]
        assert bv.filter_trainable(baskets) == [baskets[1]]

    def test_empty(self):
        assert bv.filter_trainable([]) == []

    def test_no_singletons_unchanged(self):
        baskets = [bv.Basket("t1", None, ("A", "B", "C"))]
        assert bv.filter_trainable(baskets) == baskets

    def test_idempotent(self):
        baskets = [bv.Basket("t1", None, ("A",)), bv.Basket("t2", None, ("A", "B"))]
        once = bv.filter_trainable(baskets)
        assert bv.filter_trainable(once) == once


class TestBuildVocabulary:
    def test_counting_and_order(self):
        baskets = [bv.Basket("t1", None, ("A", "B")), bv.Basket("t2", None, ("B", "C"))]
        vocab = bv.build_vocabulary(baskets, min_count=1)
        assert vocab.product_index == {"A": 0, "B": 1, "C": 2}
        assert vocab.product_counts[vocab.product_index["B"]] == 2

    def test_min_count_threshold(self):
        baskets = [bv.Basket("t1", None, ("A", "B")), bv.Basket("t2", None, ("B", "C"))]
        vocab = bv.build_vocabulary(baskets, min_count=2)
        assert vocab.product_index == {"B": 0}

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValidationError):
            bv.build_vocabulary([], min_count=1)

    def test_all_filtered_rejected(self):
        baskets = [bv.Basket("t1", None, ("A", "B"))]
        with pytest.raises(ValidationError, match="empty vocabulary"):
            bv.build_vocabulary(baskets, min_count=5)

    def test_users_indexed_without_threshold(self):
        baskets = [bv.Basket("t1", "u1", ("A", "B")), bv.Basket("t2", "u2", ("A", "B"))]
        vocab = bv.build_vocabulary(baskets, min_count=2)
        assert vocab.user_index == {"u1": 0, "u2": 1}

    def test_indices_dense(self, planted):
        vocab = planted["vocab"]
        assert sorted(vocab.product_index.values()) == list(range(vocab.n_products))

    def test_save_load_round_trip(self, tmp_path, planted):
        vocab = planted["vocab"]
        vocab.save(tmp_path / "p.vocab", tmp_path / "u.vocab")
        back = bv.Vocabulary.load(tmp_path / "p.vocab", tmp_path / "u.vocab")
        assert back.product_index == vocab.product_index
        assert back.user_index == vocab.user_index
        assert back.product_counts == vocab.product_counts
        assert back.content_hash() == vocab.content_hash()

    def test_content_hash_changes_with_content(self):
        a = bv.build_vocabulary([bv.Basket("t", None, ("A", "B"))])
        b = bv.build_vocabulary([bv.Basket("t", None, ("A", "C"))])
        assert a.content_hash() != b.content_hash()


class TestEncodeBaskets:
    def _vocab(self):
        return bv.build_vocabulary([bv.Basket("t", "u1", ("A", "B"))])

    def test_direct_mapping(self):
        vocab = self._vocab()
        enc = bv.encode_baskets([bv.Basket("t", "u1", ("A", "B"))], vocab)
        assert enc == [bv.EncodedBasket(0, (0, 1))]

    def test_unknown_dropped_then_basket_removed(self):
        vocab = self._vocab()
        enc = bv.encode_baskets([bv.Basket("t", None, ("A", "X"))], vocab)
        assert enc == []

    def test_strict_names_the_token(self):
        vocab = self._vocab()
        with pytest.raises(ValidationError, match="'X'"):
            bv.encode_baskets([bv.Basket("t", None, ("A", "X"))], vocab, strict=True)

    def test_unknown_user_becomes_anonymous(self):
        vocab = self._vocab()
        enc = bv.encode_baskets([bv.Basket("t", "u9", ("A", "B"))], vocab)
        assert enc[0].user is None

    def test_decode_recovers_surviving_tokens(self, planted):
        vocab = planted["vocab"]
        for basket, enc in zip(planted["baskets"][:20], planted["encoded"][:20]):
            assert corpus.decode_items(enc.items, vocab) == basket.items


class TestSynthetic:
    def test_deterministic(self):
        spec = bv.SyntheticSpec(n_groups=2, products_per_group=3, n_users=5,
                                n_baskets=50, seed=9)
        a = bv.generate_synthetic(spec)[0]
        b = bv.generate_synthetic(spec)[0]
        assert a == b

    def test_pure_groups_when_prob_one(self):
        spec = bv.SyntheticSpec(n_groups=2, products_per_group=3, n_users=5,
                                n_baskets=100, within_group_prob=1.0, seed=3)
        baskets, product_group, _ = bv.generate_synthetic(spec)
        for b in baskets:
            groups = {product_group[t] for t in b.items}
            assert len(groups) == 1

    def test_uniform_fill_when_prob_zero(self):
        # with 2 equal-size groups a random pair of items agrees on group
        # about half the time
        spec = bv.SyntheticSpec(n_groups=2, products_per_group=10, n_users=5,
                                n_baskets=12000, within_group_prob=0.0,
                                user_group_affinity=0.0, seed=1)
        baskets, product_group, _ = bv.generate_synthetic(spec)
        same = total = 0
        for b in baskets:
            gs = [product_group[t] for t in b.items[1:]]  # skip the seeded item
            for i in range(len(gs)):
                for j in range(i + 1, len(gs)):
                    total += 1
                    same += gs[i] == gs[j]
        assert abs(same / total - 0.5) < 0.02

    def test_no_singletons(self):
        spec = bv.SyntheticSpec(n_groups=2, products_per_group=3, n_users=5,
                                n_baskets=200, seed=2)
        baskets, _, _ = bv.generate_synthetic(spec)
        assert min(len(b.items) for b in baskets) >= 2

    def test_oracle_sizes(self):
        spec = bv.SyntheticSpec(n_groups=4, products_per_group=6, n_users=7,
                                n_baskets=10, seed=0)
        _, product_group, user_group = bv.generate_synthetic(spec)
        assert len(product_group) == 24
        assert len(user_group) == 7
        assert set(product_group.values()) <= set(range(4))

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValidationError):
            bv.SyntheticSpec(basket_len_range=(1, 4)).validate()
        with pytest.raises(ValidationError):
            bv.SyntheticSpec(within_group_prob=1.5).validate()


class TestSyntheticSpend:
    def test_one_row_per_pair_and_formula(self):
        spec = bv.SyntheticSpec(n_groups=2, products_per_group=2, n_users=4,
                                n_baskets=60, spend_base=10.0, seed=4)
        baskets, product_group, _ = bv.generate_synthetic(spec)
        rows, multipliers = bv.synthetic_spend(baskets, product_group, spec)
        seen = set()
        for user, product, amount in rows:
            assert (user, product) not in seen
            seen.add((user, product))
            expected = 10.0 * (1 + product_group[product]) * (1 + multipliers[user])
            assert amount == pytest.approx(expected, rel=1e-12)

    def test_multiplier_range(self):
        spec = bv.SyntheticSpec(n_users=50, n_baskets=10, seed=0,
                                n_groups=2, products_per_group=3)
        baskets, pg, _ = bv.generate_synthetic(spec)
        _, multipliers = bv.synthetic_spend(baskets, pg, spec)
        values = np.array(list(multipliers.values()))
        assert values.min() >= 0.0
        assert values.max() <= 2.0

    def test_deterministic(self):
        spec = bv.SyntheticSpec(n_groups=2, products_per_group=3, n_users=5,
                                n_baskets=40, seed=6)
        baskets, pg, _ = bv.generate_synthetic(spec)
        assert bv.synthetic_spend(baskets, pg, spec) == \
            bv.synthetic_spend(baskets, pg, spec)

import json
import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from moe_linker.data import (DatasetSplit, EntityCatalog, EntityRecord, MentionRecord, benchmark_stats,
                             build_entity_catalog, load_dataset, load_stats_spec, save_dataset,
                             save_entity_catalog, subsample_low_resource, subsample_size,
                             validate_dataset)
from moe_linker.errors import DataLoadError, IntegrityError, ParseError


def _write(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def _mention(i, **kw):
    row = {"id": f"m{i}", "mention_word": f"w{i}", "context": f"ctx {i}", "image": None,
           "gold_entity": "E0", "enhanced_context": None}
    row.update(kw)
    return row


def _split(n, gold="E0", name="train"):
    return DatasetSplit(name, tuple(MentionRecord(f"m{i}", "w", "c", gold) for i in range(n)))


class TestLoadDataset:
    def test_three_lines_keep_order(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [_mention(2), _mention(0), _mention(1)])
        split = load_dataset(p, "train")
        assert split.ids == ["m2", "m0", "m1"]
        assert all(m.enhanced_context is None for m in split)

    def test_enhanced_context_only_when_present(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [_mention(0, enhanced_context="ctx 0 [SEP] x"), _mention(1)])
        a, b = load_dataset(p, "valid").mentions
        assert a.enhanced_context == "ctx 0 [SEP] x" and b.enhanced_context is None

    def test_missing_mention_word_names_line(self, tmp_path):
        bad = _mention(1)
        del bad["mention_word"]
        p = _write(tmp_path / "d.jsonl", [_mention(0), bad])
        with pytest.raises(ParseError) as info:
            load_dataset(p, "train")
        assert info.value.line_no == 2

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(json.dumps(_mention(0)) + "\n{not json\n")
        with pytest.raises(ParseError) as info:
            load_dataset(p, "train")
        assert info.value.line_no == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataLoadError):
            load_dataset(tmp_path / "absent.jsonl", "train")

    def test_duplicate_id(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [_mention(0), _mention(0)])
        with pytest.raises(IntegrityError):
            load_dataset(p, "train")

    def test_empty_image_string_is_absent(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [_mention(0, image="")])
        assert load_dataset(p, "train").mentions[0].image_ref is None

    def test_split_name_checked(self, tmp_path):
        p = _write(tmp_path / "d.jsonl", [_mention(0)])
        with pytest.raises(ValueError):
            load_dataset(p, "dev")


text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20)


@given(st.lists(st.tuples(st.text(min_size=1, max_size=8, alphabet=st.characters(blacklist_categories=("Cs",))),
                          text, st.one_of(st.none(), st.text(min_size=1, max_size=5)), text), max_size=6))
def test_round_trip_is_exact(tmp_path_factory, rows):
    mentions = tuple(MentionRecord(f"id{i}", w, c, "E", img, c + suffix if i % 2 else None)
                     for i, (w, c, img, suffix) in enumerate(rows))
    split = DatasetSplit("test", mentions)
    path = tmp_path_factory.mktemp("rt") / "x.jsonl"
    save_dataset(split, path)
    assert load_dataset(path, "test") == split
    blob = path.read_bytes()
    save_dataset(load_dataset(path, "test"), path)
    assert path.read_bytes() == blob


class TestCatalog:
    def test_half_coverage(self, tmp_path):
        p = _write(tmp_path / "e.jsonl", [
            {"entity_id": "a", "name": "A", "attributes": "", "image": "x.jpg", "qid": None},
            {"entity_id": "b", "name": "B", "attributes": "", "image": None, "qid": "Q1"},
        ])
        assert build_entity_catalog(p).image_coverage == 0.5

    def test_empty(self, tmp_path):
        p = tmp_path / "e.jsonl"
        p.write_text("")
        cat = build_entity_catalog(p)
        assert len(cat) == 0 and cat.image_coverage == 0.0

    def test_duplicate(self, tmp_path):
        row = {"entity_id": "a", "name": "A", "attributes": "", "image": None, "qid": None}
        with pytest.raises(IntegrityError):
            build_entity_catalog(_write(tmp_path / "e.jsonl", [row, row]))

    def test_richpedia_coverage(self):
        n, k = 160935, 86769
        cat = EntityCatalog(EntityRecord(f"e{i}", "n", "", "i" if i < k else None) for i in range(n))
        assert cat.image_coverage == k / n
        assert round(cat.image_coverage, 4) == 0.5392

    def test_round_trip(self, tmp_path):
        cat = EntityCatalog([EntityRecord("a", "A", "attr", None, "Q1"), EntityRecord("b", "B", "", "x", None)])
        save_entity_catalog(cat, tmp_path / "c.jsonl")
        again = build_entity_catalog(tmp_path / "c.jsonl")
        assert list(again.values()) == list(cat.values())


class TestValidate:
    def test_empty(self):
        rep = validate_dataset(DatasetSplit("train", ()), EntityCatalog(), {})
        assert (rep.mentions, rep.mentions_with_image, rep.unresolved_gold) == (0, 0, 0)
        assert rep.passed

    def test_unresolved_gold(self):
        cat = EntityCatalog([EntityRecord("E0", "x")])
        split = DatasetSplit("train", (MentionRecord("a", "w", "c", "E0"), MentionRecord("b", "w", "c", "E9")))
        rep = validate_dataset(split, cat, {})
        assert rep.unresolved_gold == 1 and rep.unresolved_ids == ("b",) and not rep.passed

    def test_wikidiverse_image_coverage(self):
        stats = benchmark_stats("WikiDiverse")["total"]
        n, k = stats["mentions"], stats["mentions_with_image"]
        mentions = tuple(MentionRecord(f"m{i}", "w", "c", "E0", "img" if i < k else None) for i in range(n))
        rep = validate_dataset(DatasetSplit("test", mentions), EntityCatalog([EntityRecord("E0", "x")]), stats)
        assert rep.passed
        assert round(rep.image_coverage * 100, 2) == 44.37

    def test_count_mismatch_reported_not_raised(self):
        rep = validate_dataset(_split(3), EntityCatalog([EntityRecord("E0", "x")]), {"mentions": 4})
        assert not rep.passed and rep.checks["mentions"] == {"expected": 4, "actual": 3, "ok": False}

    def test_does_not_mutate(self):
        split = _split(3)
        cat = EntityCatalog([EntityRecord("E0", "x")])
        before = (split, dict(cat))
        validate_dataset(split, cat, {"mentions": 3})
        assert (split, dict(cat)) == before

    def test_stats_spec_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"train": {"mentions": 2, "mentions_with_image": 0}}))
        assert load_stats_spec(p)["train"]["mentions"] == 2


class TestSubsample:
    def test_full_fraction_is_permutation(self):
        split = _split(17)
        assert sorted(subsample_low_resource(split, 1.0, seed=3).ids) == sorted(split.ids)

    def test_richpedia_ten_percent(self):
        assert subsample_size(12463, 0.1) == 1246
        assert len(subsample_low_resource(_split(12463), 0.1, seed=0)) == 1246

    def test_deterministic(self):
        split = _split(100)
        assert subsample_low_resource(split, 0.2, 5).ids == subsample_low_resource(split, 0.2, 5).ids

    @pytest.mark.parametrize("frac", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            subsample_low_resource(_split(5), frac, 0)

    def test_alternate_rng(self):
        split = _split(50)
        assert len(subsample_low_resource(split, 0.5, 1, rng_name="Philox")) == 25

    @given(n=st.integers(0, 400), frac=st.floats(0.001, 1.0), seed=st.integers(0, 2**32 - 1))
    def test_size_subset_and_idempotent(self, n, frac, seed):
        split = _split(n)
        out = subsample_low_resource(split, frac, seed)
        # exact rational oracle for floor(fraction * n) on the decimal the user typed
        assert len(out) == math.floor(Fraction(repr(frac)) * n)
        assert set(out.ids) <= set(split.ids)
        assert out.ids == subsample_low_resource(split, frac, seed).ids
        order = {m: i for i, m in enumerate(split.ids)}
        assert [order[i] for i in out.ids] == sorted(order[i] for i in out.ids)

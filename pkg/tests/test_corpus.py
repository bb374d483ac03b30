import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knord.corpus import (augment_hard_negatives, build_grd_split, load_corpus,
                          load_manifest, save_corpus, save_manifest)
from knord.synthetic import make_corpus

from conftest import generic_record, make_inst, write_jsonl


class TestLoadCorpus:
    def test_empty_file_gives_empty_corpus(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        assert load_corpus(path) == []

    def test_uids_follow_record_order(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [generic_record(["a", "b", "c"], relation=f"r{i}")
                           for i in range(3)])
        corpus = load_corpus(path)
        assert [inst.uid for inst in corpus] == [1, 2, 3]
        assert [inst.gold_class for inst in corpus] == ["r0", "r1", "r2"]

    def test_bad_span_names_record(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [generic_record(["a", "b"]),
                           generic_record(["a", "b"], head=(1, 1))])
        with pytest.raises(ValueError, match="invalid span at record 1"):
            load_corpus(path)

    def test_identical_spans_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [generic_record(["a", "b"], head=(0, 1), tail=(0, 1))])
        with pytest.raises(ValueError, match="identical"):
            load_corpus(path)

    def test_missing_field_names_record_and_field(self, tmp_path):
        path = tmp_path / "c.jsonl"
        rec = generic_record(["a", "b"])
        del rec["head"]["type"]
        write_jsonl(path, [rec])
        with pytest.raises(ValueError, match="record 0: missing field 'head.type'"):
            load_corpus(path)

    def test_tacred_format_inclusive_ends(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text(json.dumps([{
            "token": ["John", "runs", "Acme", "Corp"],
            "subj_start": 0, "subj_end": 0, "subj_type": "PERSON",
            "obj_start": 2, "obj_end": 3, "obj_type": "ORGANIZATION",
            "relation": "per:employee_of",
        }]), encoding="utf-8")
        (inst,) = load_corpus(path, fmt="tacred_json")
        assert inst.head_span == (0, 1)
        assert inst.tail_span == (2, 4)
        assert inst.tail_tokens == ("Acme", "Corp")

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "x"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ValueError, match="unknown corpus format"):
            load_corpus(path, fmt="csv")

    def test_save_load_roundtrip(self, tmp_path):
        corpus = make_corpus([5, 4, 3], seed=0)
        path = tmp_path / "c.jsonl"
        save_corpus(corpus, path)
        assert load_corpus(path) == corpus


class TestBuildSplit:
    def test_top_half_by_frequency(self):
        corpus = []
        uid = 1
        for cls, count in [("a", 100), ("b", 50), ("c", 10), ("d", 5)]:
            for _ in range(count):
                corpus.append(make_inst(uid, ["x", "y", "z"], gold=cls))
                uid += 1
        split = build_grd_split(corpus, seed=0)
        assert split.known_classes == ("a", "b")
        assert split.novel_classes == ("c", "d")

    def test_external_frequencies_override_corpus_counts(self):
        corpus = [make_inst(i + 1, ["x", "y"], gold=c)
                  for i, c in enumerate(["a", "a", "a", "b", "b",
                                         "c", "c", "d", "d"])]
        split = build_grd_split(corpus, frequencies={"a": 1, "b": 2, "c": 9,
                                                     "d": 8}, seed=0)
        assert split.known_classes == ("c", "d")

    def test_labeled_count_is_floor_of_fraction(self):
        corpus = []
        uid = 1
        for cls, count in [("a", 100), ("b", 10), ("c", 4), ("d", 3)]:
            for _ in range(count):
                corpus.append(make_inst(uid, ["x", "y"], gold=cls))
                uid += 1
        split = build_grd_split(corpus, seed=1)
        assert split.known_classes == ("a", "b")
        labeled_a = [u for u in split.labeled_uids if u <= 100]
        assert len(labeled_a) == 85  # floor(0.85 * 100)
        assert len(split.labeled_uids - set(labeled_a)) == math.floor(0.85 * 10)

    def test_same_seed_reproduces_manifest(self):
        corpus = make_corpus([20, 15, 10, 5], seed=3)
        assert build_grd_split(corpus, seed=9) == build_grd_split(corpus, seed=9)

    def test_split_invariant_to_record_order(self):
        corpus = make_corpus([20, 15, 10, 5], seed=3)
        shuffled = list(corpus)
        random.Random(0).shuffle(shuffled)
        assert build_grd_split(corpus, seed=9) == build_grd_split(shuffled, seed=9)

    def test_negative_class_always_known_and_unranked(self):
        # negative outnumbers everything; it must not consume a top-50% slot
        corpus = make_corpus([10, 8, 6, 4], seed=0, negative_count=50)
        split = build_grd_split(corpus, seed=0, negative_class="no_relation")
        assert split.known_classes == ("rel_a", "rel_b", "no_relation")
        assert split.novel_classes == ("rel_c", "rel_d")
        assert split.negative_class == "no_relation"

    def test_novel_instances_all_unlabeled(self):
        corpus = make_corpus([10, 8, 6, 4], seed=0)
        split = build_grd_split(corpus, seed=0)
        novel = set(split.novel_classes)
        for inst in corpus:
            if inst.gold_class in novel:
                assert inst.uid in split.unlabeled_uids

    def test_partition_covers_each_instance_once(self):
        corpus = make_corpus([9, 7, 5, 3], seed=2, negative_count=6)
        split = build_grd_split(corpus, seed=4, negative_class="no_relation")
        all_uids = {i.uid for i in corpus}
        assert split.labeled_uids | split.unlabeled_uids == all_uids
        assert not split.labeled_uids & split.unlabeled_uids

    def test_fewer_than_two_classes_rejected(self):
        corpus = [make_inst(1, ["x", "y"], gold="only")]
        with pytest.raises(ValueError, match="at least 2"):
            build_grd_split(corpus, seed=0)

    def test_tiny_known_class_warns_and_labels_all(self):
        corpus = [make_inst(i + 1, ["x", "y"], gold="big") for i in range(10)]
        corpus.append(make_inst(11, ["x", "y"], gold="small"))
        corpus.append(make_inst(12, ["x", "y"], gold="tiny"))
        corpus.append(make_inst(13, ["x", "y"], gold="tiniest"))
        with pytest.warns(UserWarning, match="fewer than 2"):
            split = build_grd_split(
                corpus, frequencies={"big": 9, "small": 8, "tiny": 2,
                                     "tiniest": 1}, seed=0)
        assert "small" in split.known_classes
        assert 11 in split.labeled_uids

    def test_missing_gold_rejected(self):
        corpus = [make_inst(1, ["x", "y"], gold="a"), make_inst(2, ["x", "y"])]
        with pytest.raises(ValueError, match="no gold class"):
            build_grd_split(corpus, seed=0)

    def test_zero_fraction_rejected(self):
        corpus = make_corpus([4, 3], seed=0)
        with pytest.raises(ValueError, match="labeled_fraction"):
            build_grd_split(corpus, labeled_fraction=0.0, seed=0)

    def test_frequency_ties_break_lexicographically(self):
        corpus = [make_inst(i + 1, ["x", "y"], gold=c)
                  for i, c in enumerate(["b", "b", "a", "a", "c", "c", "d", "d"])]
        split = build_grd_split(corpus, seed=0)
        assert split.known_classes == ("a", "b")

    @given(st.lists(st.integers(min_value=2, max_value=30), min_size=2,
                    max_size=8), st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_frequency_rank_property(self, sizes, seed):
        # distinct counts: every known class at least as frequent as any novel
        sizes = sorted(set(sizes), reverse=True)
        if len(sizes) < 2:
            sizes = [3, 2]
        corpus = make_corpus(sizes, seed=0)
        split = build_grd_split(corpus, seed=seed)
        counts = {}
        for inst in corpus:
            counts[inst.gold_class] = counts.get(inst.gold_class, 0) + 1
        assert min(counts[c] for c in split.known_classes) >= \
            max(counts[c] for c in split.novel_classes)

    def test_manifest_roundtrip(self, tmp_path):
        corpus = make_corpus([8, 6, 4, 2], seed=1, negative_count=5)
        split = build_grd_split(corpus, seed=5, negative_class="no_relation")
        save_manifest(split, tmp_path / "split.json")
        assert load_manifest(tmp_path / "split.json") == split


class TestAugmentHardNegatives:
    def test_merged_uids_contiguous(self):
        corpus = make_corpus([6, 4], seed=0)
        negatives = [make_inst(i + 1, ["u", "v", "w"], gold="no_relation")
                     for i in range(5)]
        merged = augment_hard_negatives(corpus, negatives, "no_relation")
        assert len(merged) == 15
        assert [i.uid for i in merged] == list(range(1, 16))

    def test_empty_negatives_keep_corpus(self):
        corpus = make_corpus([3, 2], seed=0)
        merged = augment_hard_negatives(corpus, [], "no_relation")
        assert merged == list(corpus)

    def test_collision_with_positive_class_rejected(self):
        corpus = make_corpus([3, 2], seed=0)
        negatives = [make_inst(1, ["u", "v"], gold="rel_a")]
        with pytest.raises(ValueError, match="collides"):
            augment_hard_negatives(corpus, negatives, "rel_a")

    def test_mislabeled_negative_rejected(self):
        corpus = make_corpus([3, 2], seed=0)
        negatives = [make_inst(1, ["u", "v"], gold="other")]
        with pytest.raises(ValueError, match="expected 'no_relation'"):
            augment_hard_negatives(corpus, negatives, "no_relation")

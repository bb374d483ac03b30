import itertools

import numpy as np
import pytest

from knord.classifier import LabelSpace
from knord.corpus import SplitManifest
from knord.evaluation import (EvaluationReport, confidence_bifurcate,
                              hungarian_assign, load_report,
                              map_and_score, map_freeform_labels, save_report)
from knord.representation import HashEmbedder


def brute_force_optimum(matrix, mode):
    """Enumerate every padded-square permutation; independent oracle."""
    a = np.asarray(matrix, dtype=float)
    rows, cols = a.shape
    n = max(rows, cols)
    pad = np.zeros((n, n))
    pad[:rows, :cols] = a
    best = None
    for perm in itertools.permutations(range(n)):
        value = sum(pad[i, perm[i]] for i in range(n))
        if best is None or (value < best if mode == "minimize" else value > best):
            best = value
    return best


class TestHungarian:
    def test_worked_minimize_example(self):
        assignment, total = hungarian_assign([[1, 2, 3], [2, 4, 6], [3, 6, 9]],
                                             mode="minimize")
        assert assignment == [2, 1, 0]
        assert total == 10.0

    def test_diagonal_dominant_reward_picks_identity(self):
        m = np.eye(4) * 10 + np.random.default_rng(0).random((4, 4))
        assignment, _ = hungarian_assign(m, mode="maximize")
        assert assignment == [0, 1, 2, 3]

    def test_rectangular_flags_unmatched_rows(self):
        rng = np.random.default_rng(1)
        m = rng.random((5, 3)) + 0.1
        assignment, total = hungarian_assign(m, mode="maximize")
        matched = [c for c in assignment if c is not None]
        assert len(matched) == 3
        assert len(set(matched)) == 3
        assert assignment.count(None) == 2

    def test_matches_brute_force_on_random_matrices(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            rows = int(rng.integers(1, 8))
            cols = int(rng.integers(1, 8))
            m = rng.normal(size=(rows, cols))
            mode = "minimize" if rng.random() < 0.5 else "maximize"
            _, total = hungarian_assign(m, mode=mode)
            assert total == pytest.approx(brute_force_optimum(m, mode),
                                          abs=1e-9)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            hungarian_assign(np.zeros((0, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            hungarian_assign([[1.0, float("inf")], [2.0, 3.0]])


def small_split(n_known_unlabeled, n_novel_unlabeled):
    """2 known + 2 novel classes; gold assigned cyclically by uid."""
    known, novel = ("ka", "kb"), ("nx", "ny")
    gold = {}
    uid = 1
    for i in range(n_known_unlabeled):
        gold[uid] = known[i % 2]
        uid += 1
    for i in range(n_novel_unlabeled):
        gold[uid] = novel[i % 2]
        uid += 1
    split = SplitManifest(known_classes=known, novel_classes=novel,
                          labeled_uids=frozenset(),
                          unlabeled_uids=frozenset(gold))
    return split, gold


class TestMapAndScore:
    def test_slot_permutation_recovered_perfectly(self):
        split, gold = small_split(4, 4)
        space = LabelSpace.build(split.known_classes, [0, 1])
        # novel gold nx -> slot 3, ny -> slot 2: a permuted but pure mapping
        slot = {"nx": 3, "ny": 2}
        predictions = {u: (space.id_for_known(g) if g in split.known_classes
                           else slot[g])
                       for u, g in gold.items()}
        report = map_and_score(predictions, gold, space, split)
        assert report.f1_all == 1.0
        assert report.f1_known == 1.0
        assert report.f1_novel == 1.0

    def test_three_of_four_correct(self):
        split, gold = small_split(4, 0)
        space = LabelSpace.build(split.known_classes, [])
        predictions = {u: space.id_for_known(g) for u, g in gold.items()}
        wrong_uid = 1
        predictions[wrong_uid] = 1 - predictions[wrong_uid]
        report = map_and_score(predictions, gold, space, split)
        assert report.f1_all == 0.75

    def test_hand_enumerated_ten_instance_fixture(self):
        # gold: 5 known (3 ka, 2 kb), 5 novel (3 nx, 2 ny)
        split = SplitManifest(known_classes=("ka", "kb"),
                              novel_classes=("nx", "ny"),
                              labeled_uids=frozenset(),
                              unlabeled_uids=frozenset(range(1, 11)))
        gold = {1: "ka", 2: "ka", 3: "ka", 4: "kb", 5: "kb",
                6: "nx", 7: "nx", 8: "nx", 9: "ny", 10: "ny"}
        space = LabelSpace.build(split.known_classes, [0, 1])
        predictions = {1: 0, 2: 0, 3: 1,    # one ka miss
                       4: 1, 5: 1,          # kb all correct
                       6: 2, 7: 2, 8: 2,    # nx consistently in slot 2
                       9: 3, 10: 2}         # one ny strays into slot 2
        report = map_and_score(predictions, gold, space, split)
        # brute-force the novel mapping over all slot->class injections
        novel_slots, novel_classes = [2, 3, 4, 5], ["nx", "ny"]
        counts = {(s, c): sum(1 for u in range(6, 11)
                              if predictions[u] == s and gold[u] == c)
                  for s in novel_slots for c in novel_classes}
        best = max(
            (sum(counts[(s, c)] for s, c in zip(perm, novel_classes))
             for perm in itertools.permutations(novel_slots, 2)))
        assert best == 4
        assert report.mapping[2] == "nx" and report.mapping[3] == "ny"
        assert report.f1_known == pytest.approx(4 / 5)
        assert report.f1_novel == pytest.approx(4 / 5)
        assert report.f1_all == pytest.approx(8 / 10)
        assert report.subset_sizes == {"all": 10, "known": 5, "novel": 5}
        assert report.contingency[2].sum() == 4

    def test_f1_all_is_subset_weighted_combination(self):
        rng = np.random.default_rng(3)
        split, gold = small_split(7, 5)
        space = LabelSpace.build(split.known_classes, [0, 1])
        predictions = {u: int(rng.integers(0, space.n_classes)) for u in gold}
        report = map_and_score(predictions, gold, space, split)
        nk, nn = report.subset_sizes["known"], report.subset_sizes["novel"]
        combined = (nk * report.f1_known + nn * report.f1_novel) / (nk + nn)
        assert abs(report.f1_all - combined) <= 1e-12

    def test_slot_permutation_invariance(self):
        rng = np.random.default_rng(4)
        split, gold = small_split(6, 8)
        space = LabelSpace.build(split.known_classes, [0, 1])
        predictions = {u: int(rng.integers(0, space.n_classes)) for u in gold}
        base = map_and_score(predictions, gold, space, split)
        # permute the novel slot ids (2..5) consistently
        perm = {2: 4, 3: 5, 4: 3, 5: 2}
        permuted = {u: perm.get(p, p) for u, p in predictions.items()}
        shuffled = map_and_score(permuted, gold, space, split)
        assert shuffled.f1_all == base.f1_all
        assert shuffled.f1_known == base.f1_known
        assert shuffled.f1_novel == base.f1_novel

    def test_unmatched_slots_count_as_errors(self):
        split, gold = small_split(0, 4)
        space = LabelSpace.build(split.known_classes, [0, 1])
        predictions = {1: 2, 2: 3, 3: 4, 4: 5}  # four slots, two classes
        report = map_and_score(predictions, gold, space, split)
        assert sorted(report.mapping[s] for s in (2, 3, 4, 5)) == \
            ["nx", "ny", "unmatched", "unmatched"]
        assert report.f1_novel <= 0.5

    def test_missing_prediction_lists_uids(self):
        split, gold = small_split(3, 1)
        space = LabelSpace.build(split.known_classes, [0])
        with pytest.raises(ValueError, match="missing predictions .* 2, 4"):
            map_and_score({1: 0, 3: 0}, gold, space, split)

    def test_negative_class_excluded_on_request(self):
        split = SplitManifest(known_classes=("ka", "no_relation"),
                              novel_classes=("nx", "ny"),
                              labeled_uids=frozenset(),
                              unlabeled_uids=frozenset(range(1, 5)),
                              negative_class="no_relation")
        gold = {1: "ka", 2: "no_relation", 3: "nx", 4: "ny"}
        space = LabelSpace.build(split.known_classes, [0, 1])
        predictions = {1: 0, 2: 0, 3: 2, 4: 3}  # the negative is misclassified
        with_neg = map_and_score(predictions, gold, space, split)
        without = map_and_score(predictions, gold, space, split,
                                include_negative=False)
        assert with_neg.subset_sizes["known"] == 2
        assert without.subset_sizes["known"] == 1
        assert without.f1_known == 1.0
        assert with_neg.f1_known == 0.5

    def test_accepts_confidence_tuples(self):
        split, gold = small_split(2, 2)
        space = LabelSpace.build(split.known_classes, [0, 1])
        predictions = {u: (space.id_for_known(g) if g in split.known_classes
                           else 2, 0.9) for u, g in gold.items()}
        report = map_and_score(predictions, gold, space, split)
        assert report.f1_known == 1.0

    def test_report_roundtrip(self, tmp_path):
        split, gold = small_split(3, 3)
        space = LabelSpace.build(split.known_classes, [0, 1])
        predictions = {u: 0 for u in gold}
        report = map_and_score(predictions, gold, space, split)
        save_report(report, tmp_path / "r.json")
        loaded = load_report(tmp_path / "r.json")
        assert loaded.f1_all == report.f1_all
        assert loaded.mapping == report.mapping
        assert (loaded.contingency == report.contingency).all()


class TestConfidenceBifurcate:
    def test_threshold_is_mean_of_labeled(self):
        out = confidence_bifurcate([0.8, 0.8], {1: 0.6, 2: 0.9})
        assert out == {1: "novel", 2: "known"}

    def test_boundary_confidence_stays_known(self):
        out = confidence_bifurcate([0.8, 0.8], {1: 0.8})
        assert out[1] == "known"

    def test_all_above_threshold_all_known(self):
        out = confidence_bifurcate([0.1, 0.3], {u: 0.5 + u / 100 for u in
                                                range(1, 6)})
        assert set(out.values()) == {"known"}

    def test_monotone_in_confidence(self):
        labeled = [0.4, 0.6, 0.8]
        for conf in np.linspace(0, 1, 21):
            lower = confidence_bifurcate(labeled, {1: float(conf)})[1]
            higher = confidence_bifurcate(labeled, {1: float(conf) + 0.01})[1]
            assert not (lower == "known" and higher == "novel")

    def test_empty_labeled_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            confidence_bifurcate([], {1: 0.5})


class TestFreeformMapping:
    def test_identical_embedding_maps_to_itself(self):
        emb = HashEmbedder(dimension=16, seed=0)
        mapped = map_freeform_labels(["spouse"], ["spouse", "employer"], emb)
        assert mapped == ["spouse"]

    def test_zero_vector_prediction_is_well_defined(self):
        class ZeroForUnknown:
            dimension = 4

            def embed(self, token):
                return np.zeros(4) if token == "???" else np.ones(4)

        mapped = map_freeform_labels(["???"], ["a", "b"], ZeroForUnknown())
        assert mapped == ["a"]  # epsilon floor; deterministic first argmax

    def test_orthogonal_to_all_but_one(self):
        table = {"pred": [1, 0, 0], "gt1": [0, 1, 0], "gt2": [0, 0, 1],
                 "gt3": [0.9, 0, 0.1]}

        class Table:
            dimension = 3

            def embed(self, token):
                return np.asarray(table[token], dtype=float)

        mapped = map_freeform_labels(["pred"], ["gt1", "gt2", "gt3"], Table())
        assert mapped == ["gt3"]

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            map_freeform_labels(["x"], [], HashEmbedder(4))

"""Hungarian label mapping and micro-F1 evaluation on all/known/novel subsets.

Known prediction ids map to their classes by identity (they were trained on
gold labels); novel slots are mapped to novel ground-truth classes by
maximizing the slot-by-class contingency with the Hungarian algorithm.
Micro-F1 here is subset accuracy (single-label multiclass).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNMATCHED = "unmatched"


def _solve_square_min(cost):
    """O(n^3) shortest-augmenting-path assignment on a square cost matrix.

    Returns col_of_row such that sum(cost[i, col_of_row[i]]) is minimal.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row assigned to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col_of_row = np.zeros(n, dtype=int)
    for j in range(1, n + 1):
        col_of_row[match[j] - 1] = j - 1
    return col_of_row


def hungarian_assign(matrix, mode="minimize"):
    """Optimal one-to-one assignment of rows to columns.

    Rectangular matrices are padded square with zeros; rows landing on padded
    columns come back as None (unmatched).  Returns (assignment, total) where
    assignment[row] is a column index or None and total sums the matched
    entries of the original matrix.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("assignment needs a non-empty 2-d matrix")
    if not np.isfinite(a).all():
        raise ValueError("assignment matrix must be finite")
    if mode not in ("minimize", "maximize"):
        raise ValueError(f"unknown assignment mode {mode!r}")
    rows, cols = a.shape
    n = max(rows, cols)
    work = np.zeros((n, n))
    work[:rows, :cols] = -a if mode == "maximize" else a
    col_of_row = _solve_square_min(work)
    assignment = []
    total = 0.0
    for r in range(rows):
        c = int(col_of_row[r])
        if c < cols:
            assignment.append(c)
            total += float(a[r, c])
        else:
            assignment.append(None)
    return assignment, total


@dataclass
class EvaluationReport:
    f1_all: float
    f1_known: float
    f1_novel: float
    mapping: dict[int, str]          # prediction label id -> class name
    contingency: np.ndarray          # label id x class counts
    class_names: list[str]           # contingency column order
    subset_sizes: dict[str, int]

    def to_json(self) -> str:
        doc = {
            "f1_all": self.f1_all,
            "f1_known": self.f1_known,
            "f1_novel": self.f1_novel,
            "mapping": {str(k): v for k, v in self.mapping.items()},
            "contingency": self.contingency.tolist(),
            "class_names": self.class_names,
            "subset_sizes": self.subset_sizes,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(
            f1_all=doc["f1_all"], f1_known=doc["f1_known"],
            f1_novel=doc["f1_novel"],
            mapping={int(k): v for k, v in doc["mapping"].items()},
            contingency=np.asarray(doc["contingency"]),
            class_names=list(doc["class_names"]),
            subset_sizes=dict(doc["subset_sizes"]),
        )


def map_and_score(predictions, gold, label_space, split,
                  include_negative=True) -> EvaluationReport:
    """Map prediction ids to classes and score micro-F1 on all/known/novel.

    predictions: uid -> label id (or uid -> (label id, confidence)).
    gold: uid -> ground-truth class for the unlabeled uids.
    """
    wanted = set(split.unlabeled_uids)
    missing = sorted(wanted - set(predictions))
    if missing:
        shown = ", ".join(map(str, missing[:20]))
        more = "" if len(missing) <= 20 else f" (+{len(missing) - 20} more)"
        raise ValueError(f"missing predictions for uids: {shown}{more}")

    def label_of(uid):
        value = predictions[uid]
        return value[0] if isinstance(value, tuple) else int(value)

    known_set = set(split.known_classes)
    novel_set = set(split.novel_classes)
    uids = sorted(wanted)
    if not include_negative and split.negative_class is not None:
        uids = [u for u in uids if gold[u] != split.negative_class]
    for uid in uids:
        if gold[uid] not in known_set | novel_set:
            raise ValueError(f"uid={uid} has gold class {gold[uid]!r} "
                             f"outside the split's class sets")

    class_names = list(split.known_classes) + list(split.novel_classes)
    col = {c: i for i, c in enumerate(class_names)}
    n_ids = label_space.n_classes
    contingency = np.zeros((n_ids, len(class_names)), dtype=int)
    for uid in uids:
        contingency[label_of(uid), col[gold[uid]]] += 1

    n_known = len(label_space.known_classes)
    novel_slots = list(range(n_known, n_ids))
    novel_classes = list(split.novel_classes)
    mapping = {i: label_space.known_classes[i] for i in range(n_known)}
    if novel_classes and novel_slots:
        reward = contingency[np.ix_(novel_slots,
                                    [col[c] for c in novel_classes])]
        assignment, _ = hungarian_assign(reward, mode="maximize")
        for slot, c in zip(novel_slots, assignment):
            mapping[slot] = novel_classes[c] if c is not None else UNMATCHED
    else:
        for slot in novel_slots:
            mapping[slot] = UNMATCHED

    def accuracy(subset):
        if not subset:
            return 0.0
        correct = sum(1 for uid in subset
                      if mapping[label_of(uid)] == gold[uid])
        return correct / len(subset)

    known_uids = [u for u in uids if gold[u] in known_set]
    novel_uids = [u for u in uids if gold[u] in novel_set]
    return EvaluationReport(
        f1_all=accuracy(uids),
        f1_known=accuracy(known_uids),
        f1_novel=accuracy(novel_uids),
        mapping=mapping,
        contingency=contingency,
        class_names=class_names,
        subset_sizes={"all": len(uids), "known": len(known_uids),
                      "novel": len(novel_uids)},
    )


def confidence_bifurcate(labeled_confidences, unlabeled):
    """Threshold unlabeled instances at the mean labeled confidence.

    Below the threshold -> "novel"; at or above -> "known".
    """
    if not labeled_confidences:
        raise ValueError("need at least one labeled confidence")
    tau = sum(labeled_confidences) / len(labeled_confidences)
    return {uid: ("novel" if conf < tau else "known")
            for uid, conf in unlabeled.items()}


def map_freeform_labels(predicted_names, gt_names, embedder):
    """Map free-form predicted class names to their nearest ground-truth class
    by cosine similarity, with the denominator floored at 1e-8."""
    if not gt_names:
        raise ValueError("ground-truth class list is empty")
    eps = 1e-8
    gt_matrix = np.stack([np.asarray(embedder.embed(name), dtype=np.float64)
                          for name in gt_names])
    gt_norms = np.linalg.norm(gt_matrix, axis=1)
    mapped = []
    for name in predicted_names:
        z = np.asarray(embedder.embed(name), dtype=np.float64)
        denom = np.maximum(np.linalg.norm(z) * gt_norms, eps)
        sims = (gt_matrix @ z) / denom
        mapped.append(gt_names[int(np.argmax(sims))])
    return mapped


def save_report(report, path) -> None:
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")


def load_report(path) -> EvaluationReport:
    return EvaluationReport.from_json(Path(path).read_text(encoding="utf-8"))

"""Corpus loading and construction of generalized relation discovery splits.

A corpus is an ordered list of relation instances with 1-based UIDs assigned
by record order.  Splits divide classes into known (frequent) vs novel
(long-tail) sets and sample the labeled subset per known class.
"""

from __future__ import annotations

import dataclasses
import json
import math
import random
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class RelationInstance:
    """One sentence with a head/tail entity pair and an optional gold class."""

    uid: int
    tokens: tuple[str, ...]
    head_span: tuple[int, int]  # token indices, inclusive start, exclusive end
    tail_span: tuple[int, int]
    head_type: str
    tail_type: str
    gold_class: str | None = None
    head_entity_id: str | None = None
    tail_entity_id: str | None = None

    @property
    def head_tokens(self) -> tuple[str, ...]:
        return self.tokens[self.head_span[0]:self.head_span[1]]

    @property
    def tail_tokens(self) -> tuple[str, ...]:
        return self.tokens[self.tail_span[0]:self.tail_span[1]]


@dataclass(frozen=True)
class SplitManifest:
    """Known/novel class sets and the labeled/unlabeled UID partition."""

    known_classes: tuple[str, ...]
    novel_classes: tuple[str, ...]
    labeled_uids: frozenset[int]
    unlabeled_uids: frozenset[int]
    negative_class: str | None = None
    seed: int | None = None
    labeled_fraction: float | None = None

    def validate(self) -> None:
        if set(self.known_classes) & set(self.novel_classes):
            raise ValueError("known and novel class sets intersect")
        if self.labeled_uids & self.unlabeled_uids:
            raise ValueError("labeled and unlabeled uid sets intersect")


def _check_spans(tokens, head_span, tail_span, record_index):
    n = len(tokens)
    for start, end in (head_span, tail_span):
        if not (0 <= start < end <= n):
            raise ValueError(f"invalid span at record {record_index}")
    if head_span == tail_span:
        raise ValueError(
            f"record {record_index}: head and tail spans are identical")


def _require(record, key, record_index, where=""):
    if key not in record:
        loc = f"{where}." if where else ""
        raise ValueError(f"record {record_index}: missing field '{loc}{key}'")
    return record[key]


def _instance_from_generic(rec, record_index, uid):
    tokens = _require(rec, "tokens", record_index)
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ValueError(f"record {record_index}: 'tokens' must be a string array")
    out = {}
    for role in ("head", "tail"):
        ent = _require(rec, role, record_index)
        start = _require(ent, "start", record_index, where=role)
        end = _require(ent, "end", record_index, where=role)
        out[role] = (
            (int(start), int(end)),
            _require(ent, "type", record_index, where=role),
            ent.get("kb_id"),
        )
    head_span, head_type, head_kb = out["head"]
    tail_span, tail_type, tail_kb = out["tail"]
    _check_spans(tokens, head_span, tail_span, record_index)
    return RelationInstance(
        uid=uid,
        tokens=tuple(tokens),
        head_span=head_span,
        tail_span=tail_span,
        head_type=head_type,
        tail_type=tail_type,
        gold_class=rec.get("relation"),
        head_entity_id=head_kb,
        tail_entity_id=tail_kb,
    )


def _instance_from_tacred(rec, record_index, uid):
    tokens = _require(rec, "token", record_index)
    spans = {}
    for role in ("subj", "obj"):
        start = int(_require(rec, f"{role}_start", record_index))
        end = int(_require(rec, f"{role}_end", record_index))
        # TACRED span ends are inclusive
        spans[role] = (start, end + 1)
    _check_spans(tokens, spans["subj"], spans["obj"], record_index)
    return RelationInstance(
        uid=uid,
        tokens=tuple(tokens),
        head_span=spans["subj"],
        tail_span=spans["obj"],
        head_type=_require(rec, "subj_type", record_index),
        tail_type=_require(rec, "obj_type", record_index),
        gold_class=rec.get("relation"),
    )


def load_corpus(path, fmt="generic_jsonl") -> list[RelationInstance]:
    """Load a corpus file and assign UIDs 1..n in record order.

    Supported formats: "generic_jsonl" (one JSON object per line with keys
    tokens/head/tail/relation) and "tacred_json" (a JSON array of TACRED-style
    records with inclusive span ends).
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if fmt == "generic_jsonl":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        make = _instance_from_generic
    elif fmt == "tacred_json":
        records = json.loads(text) if text.strip() else []
        if not isinstance(records, list):
            raise ValueError("tacred_json corpus must be a JSON array")
        make = _instance_from_tacred
    else:
        raise ValueError(f"unknown corpus format: {fmt!r}")
    return [make(rec, i, uid=i + 1) for i, rec in enumerate(records)]


def save_corpus(instances, path) -> None:
    """Write instances as generic_jsonl; record order encodes the UIDs."""
    lines = []
    for inst in sorted(instances, key=lambda r: r.uid):
        head = {"start": inst.head_span[0], "end": inst.head_span[1],
                "type": inst.head_type}
        tail = {"start": inst.tail_span[0], "end": inst.tail_span[1],
                "type": inst.tail_type}
        if inst.head_entity_id is not None:
            head["kb_id"] = inst.head_entity_id
        if inst.tail_entity_id is not None:
            tail["kb_id"] = inst.tail_entity_id
        rec = {"tokens": list(inst.tokens), "head": head, "tail": tail}
        if inst.gold_class is not None:
            rec["relation"] = inst.gold_class
        lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def augment_hard_negatives(corpus, negatives, negative_class) -> list[RelationInstance]:
    """Append hard-negative instances and re-assign contiguous UIDs."""
    positive_classes = {i.gold_class for i in corpus if i.gold_class is not None}
    if negative_class in positive_classes:
        raise ValueError(
            f"negative class {negative_class!r} collides with an existing class")
    for neg in negatives:
        if neg.gold_class != negative_class:
            raise ValueError(
                f"negative instance uid={neg.uid} carries class "
                f"{neg.gold_class!r}, expected {negative_class!r}")
    merged = list(corpus) + list(negatives)
    return [dataclasses.replace(inst, uid=i + 1) for i, inst in enumerate(merged)]


def build_grd_split(corpus, frequencies=None, labeled_fraction=0.85, seed=0,
                    negative_class=None) -> SplitManifest:
    """Split classes by frequency into known/novel and sample the labeled set.

    The top floor(n/2) most frequent positive classes become known (ties broken
    lexicographically), the rest novel.  The negative class never enters the
    frequency ranking; it is appended to the known set.  Per known class,
    floor(labeled_fraction * count) instances are sampled (seeded) as labeled;
    everything else, including all novel-class instances, is unlabeled.
    """
    if not 0.0 < labeled_fraction <= 1.0:
        raise ValueError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    uids_by_class: dict[str, list[int]] = {}
    for inst in corpus:
        if inst.gold_class is None:
            raise ValueError(f"instance uid={inst.uid} has no gold class")
        uids_by_class.setdefault(inst.gold_class, []).append(inst.uid)

    positive = sorted(c for c in uids_by_class if c != negative_class)
    if len(positive) < 2:
        raise ValueError(
            f"need at least 2 positive classes to split, got {len(positive)}")
    if frequencies is None:
        counts = {c: len(uids_by_class[c]) for c in positive}
    else:
        missing = [c for c in positive if c not in frequencies]
        if missing:
            raise ValueError(f"frequency map missing classes: {missing}")
        counts = {c: frequencies[c] for c in positive}

    ranked = sorted(positive, key=lambda c: (-counts[c], c))
    n_known = len(ranked) // 2
    known = ranked[:n_known]
    novel = tuple(sorted(ranked[n_known:]))
    if negative_class is not None and negative_class in uids_by_class:
        known = known + [negative_class]

    rng = random.Random(seed)
    labeled: set[int] = set()
    for cls in sorted(known):
        uids = sorted(uids_by_class[cls])
        if len(uids) < 2:
            warnings.warn(
                f"known class {cls!r} has fewer than 2 instances; labeling all")
            labeled.update(uids)
            continue
        k = math.floor(labeled_fraction * len(uids))
        labeled.update(rng.sample(uids, k))

    all_uids = {inst.uid for inst in corpus}
    manifest = SplitManifest(
        known_classes=tuple(known),
        novel_classes=novel,
        labeled_uids=frozenset(labeled),
        unlabeled_uids=frozenset(all_uids - labeled),
        negative_class=negative_class,
        seed=seed,
        labeled_fraction=labeled_fraction,
    )
    manifest.validate()
    return manifest


def save_manifest(manifest, path) -> None:
    doc = {
        "known_classes": list(manifest.known_classes),
        "novel_classes": list(manifest.novel_classes),
        "labeled_uids": sorted(manifest.labeled_uids),
        "unlabeled_uids": sorted(manifest.unlabeled_uids),
        "negative_class": manifest.negative_class,
        "seed": manifest.seed,
        "labeled_fraction": manifest.labeled_fraction,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_manifest(path) -> SplitManifest:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    manifest = SplitManifest(
        known_classes=tuple(doc["known_classes"]),
        novel_classes=tuple(doc["novel_classes"]),
        labeled_uids=frozenset(doc["labeled_uids"]),
        unlabeled_uids=frozenset(doc["unlabeled_uids"]),
        negative_class=doc.get("negative_class"),
        seed=doc.get("seed"),
        labeled_fraction=doc.get("labeled_fraction"),
    )
    manifest.validate()
    return manifest

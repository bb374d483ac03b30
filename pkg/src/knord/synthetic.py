"""Synthetic corpora with planted relation classes, for tests and smoke runs.

Every instance of a planted class shares a fixed set of class-indicative
tokens and class-specific entity surface forms, so a backend that ranks those
tokens highly yields identical per-class representations and the downstream
stages have a known ground truth.
"""

from __future__ import annotations

import random

from .corpus import RelationInstance

_TYPE_PAIRS = [
    ("PERSON", "ORGANIZATION"),
    ("PERSON", "LOCATION"),
    ("ORGANIZATION", "LOCATION"),
    ("PERSON", "PERSON"),
]

_FILLERS = ["the", "a", "of", "and", "was", "were", "in", "on", "with", "that",
            "for", "by", "its", "his", "her", "their", "then", "also", "now",
            "later", "once", "still", "again", "both", "each"]


def class_name(i):
    return f"rel_{chr(ord('a') + i)}"


def indicative_tokens(i, n=3):
    return [f"cue{i}x{j}" for j in range(n)]


def make_instance(uid, class_index, rng, gold=None,
                  negative=False) -> RelationInstance:
    """One synthetic sentence; indicative cues are omitted for negatives."""
    head = [f"Head{class_index}"]
    tail = [f"Tail{class_index}"]
    middle = list(indicative_tokens(class_index)) if not negative else []
    middle = middle + rng.sample(_FILLERS, 4)
    tokens = head + middle + tail
    pair = _TYPE_PAIRS[class_index % len(_TYPE_PAIRS)]
    return RelationInstance(
        uid=uid,
        tokens=tuple(tokens),
        head_span=(0, 1),
        tail_span=(len(tokens) - 1, len(tokens)),
        head_type=pair[0],
        tail_type=pair[1],
        gold_class=gold if gold is not None else class_name(class_index),
    )


def make_corpus(class_sizes, seed=0, negative_count=0,
                negative_class="no_relation") -> list[RelationInstance]:
    """Corpus with len(class_sizes) planted classes plus optional negatives.

    class_sizes[i] instances are generated for class i; counts should be
    distinct if the frequency ranking is meant to be unambiguous.
    """
    rng = random.Random(seed)
    instances = []
    uid = 1
    for class_index, size in enumerate(class_sizes):
        for _ in range(size):
            instances.append(make_instance(uid, class_index, rng))
            uid += 1
    for j in range(negative_count):
        inst = make_instance(uid, class_index=j % len(class_sizes), rng=rng,
                             gold=negative_class, negative=True)
        instances.append(inst)
        uid += 1
    return instances


def planted_score_overrides(n_classes, base=10.0):
    """Stub-backend score overrides that pin each class's cues to the top.

    Cue tokens for class i get scores far above any hash-seeded token score
    (which live in [0, 1)), with a fixed within-class ordering.
    """
    overrides = {}
    for i in range(n_classes):
        for j, tok in enumerate(indicative_tokens(i)):
            overrides[tok] = base + i + (3 - j) * 0.1
    return overrides

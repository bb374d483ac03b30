#!/usr/bin/env python3
"""Regenerate the bundled smoke fixture under fixtures/.

Deterministic: rerunning produces byte-identical files.
"""

import json
from pathlib import Path

from knord.corpus import save_corpus
from knord.synthetic import make_corpus

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

POSITIVE_SIZES = [46, 44, 42, 40, 38, 36, 34, 32, 30, 28, 26, 24]
NEGATIVES = 60

ONTOLOGY = {
    "roots": ["person", "organization", "location"],
    "nodes": {
        "politician": {"subclass_of": ["person"]},
        "company": {"subclass_of": ["organization"]},
        "startup": {"subclass_of": ["company"]},
        "city": {"subclass_of": ["location"]},
        # leaf with no subclass parent: falls back to instance_of
        "Q_mayor_of_springfield": {"instance_of": ["politician"]},
        # two-node loop; the second-listed parent escapes it
        "makeup_artist": {"subclass_of": ["hair_and_makeup_artist", "person"]},
        "hair_and_makeup_artist": {"subclass_of": ["makeup_artist"]},
    },
    # expected resolutions, used by the test suite
    "expect": {
        "politician": "person",
        "startup": "organization",
        "city": "location",
        "Q_mayor_of_springfield": "person",
        "makeup_artist": "person",
        "hair_and_makeup_artist": "person",
    },
}

SMOKE_CFG = """\
# smoke-run configuration: deterministic stub backends, bundled corpus
dataset_path = smoke_corpus.jsonl
negatives_path = smoke_negatives.jsonl
negative_class = no_relation
metatype_source = types
out_dir = ../runs/smoke
seed = 41
prompt_backend = stub
encoder_backend = stub
"""


def main():
    FIXTURES.mkdir(exist_ok=True)
    positives = make_corpus(POSITIVE_SIZES, seed=7)
    negatives = make_corpus(POSITIVE_SIZES[:4], seed=13, negative_count=NEGATIVES)
    negatives = [n for n in negatives if n.gold_class == "no_relation"]
    save_corpus(positives, FIXTURES / "smoke_corpus.jsonl")
    save_corpus(negatives, FIXTURES / "smoke_negatives.jsonl")
    (FIXTURES / "ontology.json").write_text(
        json.dumps(ONTOLOGY, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (FIXTURES / "smoke.cfg").write_text(SMOKE_CFG, encoding="utf-8")
    print(f"wrote {len(positives)} positives, {len(negatives)} negatives")


if __name__ == "__main__":
    main()

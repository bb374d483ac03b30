import json

import pytest

from knord.corpus import RelationInstance


def make_inst(uid, tokens, head=(0, 1), tail=None, head_type="PERSON",
              tail_type="ORG", gold=None, head_id=None, tail_id=None):
    tokens = tuple(tokens)
    if tail is None:
        tail = (len(tokens) - 1, len(tokens))
    return RelationInstance(uid=uid, tokens=tokens, head_span=head,
                            tail_span=tail, head_type=head_type,
                            tail_type=tail_type, gold_class=gold,
                            head_entity_id=head_id, tail_entity_id=tail_id)


@pytest.fixture
def john_acme():
    return make_inst(1, ["John", "founded", "Acme"], gold="org:founded_by")


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n",
                    encoding="utf-8")


def generic_record(tokens, head=(0, 1), tail=None, relation=None,
                   head_type="PERSON", tail_type="ORG"):
    if tail is None:
        tail = (len(tokens) - 1, len(tokens))
    rec = {
        "tokens": list(tokens),
        "head": {"start": head[0], "end": head[1], "type": head_type},
        "tail": {"start": tail[0], "end": tail[1], "type": tail_type},
    }
    if relation is not None:
        rec["relation"] = relation
    return rec

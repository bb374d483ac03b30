import json

import pytest

from knord.metatype import (MetaTypePair, MetaTypeResolver, OntologyGraph,
                            KbServiceError, WikidataClient, meta_type_of_pair)

from conftest import make_inst


def graph(nodes, roots=("ROOT",)):
    return OntologyGraph(
        subclass_of={n: v.get("subclass_of", []) for n, v in nodes.items()},
        instance_of={n: v.get("instance_of", []) for n, v in nodes.items()},
        roots=frozenset(roots),
    )


class TestResolver:
    def test_linear_chain(self):
        g = graph({"X": {"subclass_of": ["Y"]}, "Y": {"subclass_of": ["ROOT"]}})
        assert MetaTypeResolver(g).resolve("X") == "ROOT"

    def test_loop_falls_through_to_second_parent(self):
        g = graph({"A": {"subclass_of": ["B", "ROOT"]},
                   "B": {"subclass_of": ["A"]}})
        resolver = MetaTypeResolver(g)
        assert resolver.resolve("A") == "ROOT"
        assert resolver.resolve("B") == "ROOT"

    def test_missing_subclass_falls_back_to_instance_of(self):
        g = graph({"L": {"instance_of": ["C"]}, "C": {"subclass_of": ["ROOT"]}})
        assert MetaTypeResolver(g).resolve("L") == "ROOT"

    def test_unknown_entity_is_unknown(self):
        assert MetaTypeResolver(graph({})).resolve("Q404") == "unknown"

    def test_all_parents_loop_is_unknown(self):
        g = graph({"A": {"subclass_of": ["B"]}, "B": {"subclass_of": ["A"]}})
        assert MetaTypeResolver(g).resolve("A") == "unknown"

    def test_unrelated_edits_leave_resolution_unchanged(self):
        base = {"X": {"subclass_of": ["Y"]}, "Y": {"subclass_of": ["ROOT"]}}
        extra = dict(base)
        extra["Z"] = {"subclass_of": ["W"]}
        extra["W"] = {"instance_of": ["ROOT"]}
        assert (MetaTypeResolver(graph(base)).resolve("X")
                == MetaTypeResolver(graph(extra)).resolve("X"))

    def test_terminates_on_dense_finite_graph(self):
        # every node points at every other node; no roots reachable
        nodes = {f"n{i}": {"subclass_of": [f"n{j}" for j in range(8) if j != i]}
                 for i in range(8)}
        assert MetaTypeResolver(graph(nodes)).resolve("n0") == "unknown"

    def test_fixture_file_roundtrip(self, tmp_path):
        doc = {"roots": ["ROOT"],
               "nodes": {"X": {"subclass_of": ["ROOT"], "instance_of": []}}}
        path = tmp_path / "g.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        g = OntologyGraph.from_file(path)
        assert MetaTypeResolver(g).resolve("X") == "ROOT"


class CountingSource:
    """Fixture-graph source that counts parent lookups."""

    def __init__(self, g):
        self.g = g
        self.calls = 0

    def subclass_parents(self, node):
        self.calls += 1
        return self.g.subclass_parents(node)

    def instance_parents(self, node):
        return self.g.instance_parents(node)

    def is_root(self, node):
        return self.g.is_root(node)


class TestCache:
    def test_second_resolution_hits_cache(self, tmp_path):
        g = graph({"X": {"subclass_of": ["ROOT"]}})
        source = CountingSource(g)
        resolver = MetaTypeResolver(source, cache_path=tmp_path / "cache.tsv")
        assert resolver.resolve("X") == "ROOT"
        calls = source.calls
        assert resolver.resolve("X") == "ROOT"
        assert source.calls == calls

    def test_cache_survives_restart(self, tmp_path):
        g = graph({"X": {"subclass_of": ["ROOT"]}})
        cache = tmp_path / "cache.tsv"
        MetaTypeResolver(g, cache_path=cache).resolve("X")
        source = CountingSource(g)
        resolver = MetaTypeResolver(source, cache_path=cache)
        assert resolver.resolve("X") == "ROOT"
        assert source.calls == 0

    def test_cache_file_is_flat_tsv(self, tmp_path):
        g = graph({"X": {"subclass_of": ["ROOT"]}})
        cache = tmp_path / "cache.tsv"
        MetaTypeResolver(g, cache_path=cache).resolve("X")
        assert cache.read_text(encoding="utf-8") == "X\tROOT\n"


def entity_body(entity_id, subclass=(), instance=()):
    def claims(values):
        return [{"mainsnak": {"datavalue": {"value": {"id": v}}}}
                for v in values]

    return json.dumps({"entities": {entity_id: {"claims": {
        "P279": claims(subclass), "P31": claims(instance)}}}})


class TestLiveClient:
    def test_parses_claims_and_resolves(self):
        pages = {
            "Q1": entity_body("Q1", subclass=["Q2"]),
            "Q2": entity_body("Q2"),  # no parents at all: a root
        }

        def fake_get(url):
            qid = url.rsplit("/", 1)[1].removesuffix(".json")
            if qid in pages:
                return 200, {}, pages[qid]
            return 404, {}, ""

        client = WikidataClient(http_get=fake_get, min_interval=0, sleep=lambda s: None)
        resolver = MetaTypeResolver(client)
        assert resolver.resolve("Q1") == "Q2"
        assert resolver.resolve("Q404") == "unknown"

    def test_unreachable_service_raises_with_retry_after(self):
        def failing_get(url):
            return 503, {"Retry-After": "7"}, ""

        client = WikidataClient(http_get=failing_get, max_retries=2,
                                min_interval=0, sleep=lambda s: None)
        with pytest.raises(KbServiceError) as exc:
            client.fetch_entity("Q1")
        assert exc.value.retry_after == 7.0

    def test_backoff_retries_transient_errors(self):
        attempts = []

        def flaky_get(url):
            attempts.append(url)
            if len(attempts) < 3:
                return 500, {}, ""
            return 200, {}, entity_body("Q1")

        client = WikidataClient(http_get=flaky_get, min_interval=0,
                                sleep=lambda s: None)
        assert client.fetch_entity("Q1") == {"subclass_of": [], "instance_of": []}
        assert len(attempts) == 3


class TestPairResolution:
    def test_types_pass_through_without_kb_ids(self):
        inst = make_inst(1, ["a", "b"], head_type="PERSON", tail_type="ORG")
        assert meta_type_of_pair(inst) == MetaTypePair("PERSON", "ORG")

    def test_kb_ids_resolve_through_graph(self):
        g = graph({"Q5": {"subclass_of": ["human"]},
                   "Q43229": {"subclass_of": ["organization"]}},
                  roots=("human", "organization"))
        inst = make_inst(1, ["a", "b"], head_id="Q5", tail_id="Q43229")
        pair = meta_type_of_pair(inst, MetaTypeResolver(g))
        assert pair == MetaTypePair("human", "organization")

    def test_unresolvable_becomes_unknown(self):
        inst = make_inst(1, ["a", "b"], head_type="", tail_type="",
                         head_id="Qx", tail_id="Qy")
        pair = meta_type_of_pair(inst, MetaTypeResolver(graph({})))
        assert pair == MetaTypePair("unknown", "unknown")

    def test_pair_is_ordered(self):
        assert MetaTypePair("a", "b") != MetaTypePair("b", "a")

"""Entity meta-type resolution by recursive ontology traversal.

Each entity is walked up the "subclass of" hierarchy until a root is reached,
falling back to "instance of" where a node has no subclass parent, and trying
later-listed parents when the first one loops back onto the current path.
Results are memoized in a flat tab-separated cache file.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

UNKNOWN_META = "unknown"

SUBCLASS_PROPERTY = "P279"
INSTANCE_PROPERTY = "P31"


class MetaTypePair(NamedTuple):
    head_meta: str
    tail_meta: str


class KbServiceError(RuntimeError):
    """Knowledge-base service unreachable; carries retry-after seconds when known."""

    def __init__(self, message, retry_after=None):
        super().__init__(message)
        self.retry_after = retry_after


@dataclass
class OntologyGraph:
    """Finite fixture ontology: per-node parent lists plus an explicit root set."""

    subclass_of: dict[str, list[str]] = field(default_factory=dict)
    instance_of: dict[str, list[str]] = field(default_factory=dict)
    roots: frozenset[str] = frozenset()

    @classmethod
    def from_file(cls, path) -> "OntologyGraph":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        nodes = doc.get("nodes", {})
        return cls(
            subclass_of={n: list(v.get("subclass_of", [])) for n, v in nodes.items()},
            instance_of={n: list(v.get("instance_of", [])) for n, v in nodes.items()},
            roots=frozenset(doc.get("roots", [])),
        )

    def subclass_parents(self, node):
        return self.subclass_of.get(node, [])

    def instance_parents(self, node):
        return self.instance_of.get(node, [])

    def is_root(self, node):
        return node in self.roots


class WikidataClient:
    """Minimal live client for a Wikidata-style entity API.

    Fetches the claim lists for "subclass of" and "instance of".  Requests are
    rate limited to at most 10 per second with exponential backoff on
    transient failures.
    """

    def __init__(self, endpoint="https://www.wikidata.org/wiki/Special:EntityData",
                 http_get=None, max_retries=4, min_interval=0.1, sleep=time.sleep):
        self.endpoint = endpoint.rstrip("/")
        self._http_get = http_get or self._requests_get
        self.max_retries = max_retries
        self.min_interval = min_interval
        self._sleep = sleep
        self._last_request = 0.0
        self.request_count = 0

    @staticmethod
    def _requests_get(url):
        import requests

        resp = requests.get(url, timeout=30)
        return resp.status_code, dict(resp.headers), resp.text

    def _throttle(self):
        wait = self.min_interval - (time.monotonic() - self._last_request)
        if wait > 0:
            self._sleep(wait)
        self._last_request = time.monotonic()

    def fetch_entity(self, entity_id):
        """Return {"subclass_of": [...], "instance_of": [...]} or None if absent."""
        url = f"{self.endpoint}/{entity_id}.json"
        delay = 0.5
        retry_after = None
        for attempt in range(self.max_retries + 1):
            self._throttle()
            self.request_count += 1
            try:
                status, headers, body = self._http_get(url)
            except Exception:
                status, headers, body = None, {}, None
            if status == 404:
                return None
            if status is not None and 200 <= status < 300:
                return self._parse_entity(entity_id, body)
            retry_after = headers.get("Retry-After", retry_after)
            if attempt < self.max_retries:
                self._sleep(delay)
                delay *= 2
        raise KbServiceError(
            f"knowledge-base service unreachable for {entity_id}",
            retry_after=float(retry_after) if retry_after is not None else None)

    @staticmethod
    def _parse_entity(entity_id, body):
        doc = json.loads(body)
        entity = doc.get("entities", {}).get(entity_id, {})
        claims = entity.get("claims", {})

        def targets(prop):
            out = []
            for claim in claims.get(prop, []):
                value = claim.get("mainsnak", {}).get("datavalue", {}).get("value")
                if isinstance(value, dict) and "id" in value:
                    out.append(value["id"])
            return out

        return {"subclass_of": targets(SUBCLASS_PROPERTY),
                "instance_of": targets(INSTANCE_PROPERTY)}


class _LiveSource:
    """Adapter exposing the fixture-graph interface over the live client.

    A fetched node with neither subclass nor instance parents is treated as a
    root; an unfetchable node is unknown.
    """

    def __init__(self, client):
        self.client = client
        self._entities = {}

    def _get(self, node):
        if node not in self._entities:
            self._entities[node] = self.client.fetch_entity(node)
        return self._entities[node]

    def subclass_parents(self, node):
        ent = self._get(node)
        return ent["subclass_of"] if ent else []

    def instance_parents(self, node):
        ent = self._get(node)
        return ent["instance_of"] if ent else []

    def is_root(self, node):
        ent = self._get(node)
        return bool(ent) and not ent["subclass_of"] and not ent["instance_of"]


class MetaTypeResolver:
    """Resolve entity ids to the ontology root reached by subclass traversal."""

    def __init__(self, source, cache_path=None):
        if isinstance(source, WikidataClient):
            source = _LiveSource(source)
        self._source = source
        self._cache_path = Path(cache_path) if cache_path else None
        self._cache: dict[str, str] = {}
        if self._cache_path and self._cache_path.exists():
            for line in self._cache_path.read_text(encoding="utf-8").splitlines():
                if line:
                    entity_id, meta = line.split("\t", 1)
                    self._cache[entity_id] = meta

    def resolve(self, entity_id) -> str:
        if entity_id in self._cache:
            return self._cache[entity_id]
        meta = self._walk(entity_id, frozenset()) or UNKNOWN_META
        self._cache[entity_id] = meta
        self._flush()
        return meta

    def _walk(self, node, path):
        if self._source.is_root(node):
            return node
        parents = self._source.subclass_parents(node)
        if not parents:
            parents = self._source.instance_parents(node)
        on_path = path | {node}
        for parent in parents:
            if parent in on_path:
                continue  # would close a cycle; try the next listed parent
            found = self._walk(parent, on_path)
            if found is not None:
                return found
        return None

    def _flush(self):
        if self._cache_path is None:
            return
        tmp = self._cache_path.with_suffix(self._cache_path.suffix + ".tmp")
        lines = [f"{k}\t{v}" for k, v in sorted(self._cache.items())]
        tmp.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
        os.replace(tmp, self._cache_path)


def meta_type_of_pair(instance, resolver=None) -> MetaTypePair:
    """Meta-type pair for one instance.

    KB ids are resolved through the resolver when present; otherwise the
    dataset-provided entity types pass through verbatim.  Anything
    unresolvable becomes "unknown".
    """

    def one_side(entity_id, fallback_type):
        if entity_id is not None and resolver is not None:
            return resolver.resolve(entity_id)
        return fallback_type if fallback_type else UNKNOWN_META

    return MetaTypePair(
        head_meta=one_side(instance.head_entity_id, instance.head_type),
        tail_meta=one_side(instance.tail_entity_id, instance.tail_type),
    )

"""Combined relation representations from top-ranked predicted tokens.

The constrained and unconstrained top-n token embeddings are mean-pooled
separately and concatenated (constrained half first) into one vector of
length 2*D.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hashutil import token_rng

_CACHE_MAGIC = "KNORD-REPR 1"


class PhraseEmbedder:
    """Deterministic token -> fixed-length vector."""

    dimension: int

    def embed(self, token):
        raise NotImplementedError


class HashEmbedder(PhraseEmbedder):
    """Seeded random projection of a hashed one-hot.

    Every token deterministically maps to its own Gaussian vector, so distinct
    tokens get near-orthogonal embeddings without any trained model.
    """

    def __init__(self, dimension=64, seed=0):
        self.dimension = dimension
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, token):
        vec = self._cache.get(token)
        if vec is None:
            vec = token_rng(self.seed, token).standard_normal(self.dimension)
            self._cache[token] = vec
        return vec


@dataclass
class RelationRepresentation:
    uid: int
    vector: np.ndarray  # length 2*D: constrained mean then unconstrained mean
    constrained_tokens: tuple[str, ...]
    unconstrained_tokens: tuple[str, ...]


def build_representation(uid, constrained, unconstrained, embedder,
                         n=3) -> RelationRepresentation:
    """Mean-pool the top-n tokens of each ranking and concatenate.

    Rankings shorter than n are averaged over what exists.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    halves = {}
    tops = {}
    for ranking in (constrained, unconstrained):
        if not ranking.entries:
            raise ValueError(f"empty {ranking.mode} ranking for uid={uid}")
        tokens = ranking.top(min(n, len(ranking.entries)))
        halves[ranking.mode] = np.mean([embedder.embed(t) for t in tokens], axis=0)
        tops[ranking.mode] = tuple(tokens)
    return RelationRepresentation(
        uid=uid,
        vector=np.concatenate([halves["constrained"], halves["unconstrained"]]),
        constrained_tokens=tops["constrained"],
        unconstrained_tokens=tops["unconstrained"],
    )


def embed_matrix(representations, dim=None):
    """Stack representations into (matrix, uids) with rows in ascending UID order."""
    reps = sorted(representations, key=lambda r: r.uid)
    uids = [r.uid for r in reps]
    if len(set(uids)) != len(uids):
        dupes = sorted({u for u in uids if uids.count(u) > 1})
        raise ValueError(f"duplicate uids in representations: {dupes}")
    if not reps:
        return np.zeros((0, dim or 0)), []
    width = len(reps[0].vector)
    if dim is not None and width != dim:
        raise ValueError(f"representation dimension {width} != expected {dim}")
    if any(len(r.vector) != width for r in reps):
        raise ValueError("representations have mismatched dimensions")
    return np.stack([r.vector for r in reps]).astype(np.float64), uids


def write_representation_cache(representations, path) -> None:
    """Binary cache: a text header line, then per-UID rows of uint32 uid +
    float32 little-endian vector.  A .txt sidecar lists the top tokens."""
    reps = sorted(representations, key=lambda r: r.uid)
    width = len(reps[0].vector) if reps else 0
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"{_CACHE_MAGIC} count={len(reps)} dim={width} "
                 f"dtype=float32-le\n".encode("ascii"))
        for r in reps:
            fh.write(struct.pack("<I", r.uid))
            fh.write(np.asarray(r.vector, dtype="<f4").tobytes())
    sidecar = [
        json.dumps({"uid": r.uid,
                    "constrained": list(r.constrained_tokens),
                    "unconstrained": list(r.unconstrained_tokens)},
                   sort_keys=True)
        for r in reps
    ]
    path.with_suffix(path.suffix + ".txt").write_text(
        "\n".join(sidecar) + ("\n" if sidecar else ""), encoding="utf-8")


def read_representation_cache(path):
    """Read the binary cache back as (matrix, uids)."""
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    header = raw[:newline].decode("ascii")
    if not header.startswith(_CACHE_MAGIC):
        raise ValueError(f"not a representation cache: {path}")
    fields = dict(kv.split("=") for kv in header.split()[2:])
    count, dim = int(fields["count"]), int(fields["dim"])
    body = raw[newline + 1:]
    row_bytes = 4 + 4 * dim
    if len(body) != count * row_bytes:
        raise ValueError(f"truncated representation cache: {path}")
    uids, rows = [], []
    for i in range(count):
        chunk = body[i * row_bytes:(i + 1) * row_bytes]
        uids.append(struct.unpack("<I", chunk[:4])[0])
        rows.append(np.frombuffer(chunk[4:], dtype="<f4").astype(np.float64))
    matrix = np.stack(rows) if rows else np.zeros((0, dim))
    return matrix, uids


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

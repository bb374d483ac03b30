"""Relation classifier over entity-marked sequences.

Sequences carry a "head_type tail_type :" prefix and <H>/<T> marker pairs
around the entity spans.  The relation feature is the concatenation of the
mean-pooled hidden states over the two entity ranges; a linear softmax head
over N = 3 * |known classes| slots is trained with cross-entropy on gold plus
weak labels.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hashutil import token_rng

HEAD_OPEN, HEAD_CLOSE = "<H>", "</H>"
TAIL_OPEN, TAIL_CLOSE = "<T>", "</T>"
TYPE_SEP = ":"
MARKER_TOKENS = (HEAD_OPEN, HEAD_CLOSE, TAIL_OPEN, TAIL_CLOSE)
UNK_TOKEN = "<unk>"


@dataclass
class MarkedSequence:
    tokens: list[str]
    head_token_range: tuple[int, int]  # entity tokens only, markers excluded
    tail_token_range: tuple[int, int]


def encode_with_markers(instance) -> MarkedSequence:
    """Wrap entity spans with marker pairs and prepend the type prefix."""
    (h0, h1), (t0, t1) = instance.head_span, instance.tail_span
    if h0 < t1 and t0 < h1:
        raise ValueError(
            f"uid={instance.uid}: head and tail spans overlap")
    spans = sorted([("head", h0, h1), ("tail", t0, t1)], key=lambda s: s[1])

    out = [instance.head_type, instance.tail_type, TYPE_SEP]
    ranges = {}
    cursor = 0
    for role, start, end in spans:
        out.extend(instance.tokens[cursor:start])
        out.append(HEAD_OPEN if role == "head" else TAIL_OPEN)
        lo = len(out)
        out.extend(instance.tokens[start:end])
        ranges[role] = (lo, len(out))
        out.append(HEAD_CLOSE if role == "head" else TAIL_CLOSE)
        cursor = end
    out.extend(instance.tokens[cursor:])
    return MarkedSequence(tokens=out, head_token_range=ranges["head"],
                          tail_token_range=ranges["tail"])


def strip_markers(seq) -> list[str]:
    """Inverse of encode_with_markers: drop the prefix and marker tokens."""
    return [t for t in seq.tokens[3:] if t not in MARKER_TOKENS]


class SequenceEncoder:
    """Token sequence -> per-token hidden vectors of width hidden_dim."""

    hidden_dim: int
    trainable = False

    def encode(self, tokens):
        raise NotImplementedError


class StubSequenceEncoder(SequenceEncoder):
    """Frozen deterministic encoder: each token maps to a fixed hash vector."""

    def __init__(self, hidden_dim=32, seed=0):
        self.hidden_dim = hidden_dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token):
        vec = self._cache.get(token)
        if vec is None:
            vec = token_rng(self.seed, token).standard_normal(self.hidden_dim)
            self._cache[token] = vec
        return vec

    def encode(self, tokens):
        if not tokens:
            return np.zeros((0, self.hidden_dim))
        return np.stack([self._vector(t) for t in tokens])


class DeskEncoder(SequenceEncoder):
    """Small trainable encoder: embeddings plus one context-mixing tanh layer.

    h_i = tanh(e_i W1 + mean(e) W2 + b), so every position sees the whole
    sequence through the mean context.
    """

    trainable = True

    def __init__(self, vocabulary, hidden_dim=32, embed_dim=32, seed=0):
        self.vocabulary = list(dict.fromkeys([UNK_TOKEN, *vocabulary]))
        self.vocab_index = {t: i for i, t in enumerate(self.vocabulary)}
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        v = len(self.vocabulary)
        self.params = {
            "emb": rng.normal(scale=0.1, size=(v, embed_dim)),
            "w1": rng.normal(scale=1.0 / math.sqrt(embed_dim),
                             size=(embed_dim, hidden_dim)),
            "w2": rng.normal(scale=1.0 / math.sqrt(embed_dim),
                             size=(embed_dim, hidden_dim)),
            "b": np.zeros(hidden_dim),
        }

    def _ids(self, tokens):
        unk = self.vocab_index[UNK_TOKEN]
        return [self.vocab_index.get(t, unk) for t in tokens]

    def encode(self, tokens):
        h, _ = self.forward(tokens)
        return h

    def forward(self, tokens):
        ids = self._ids(tokens)
        e = self.params["emb"][ids]
        ctx = e.mean(axis=0)
        pre = e @ self.params["w1"] + ctx @ self.params["w2"] + self.params["b"]
        h = np.tanh(pre)
        return h, {"ids": ids, "e": e, "ctx": ctx, "h": h}

    def backward(self, cache, dh, grads):
        """Accumulate parameter gradients for one sequence given dL/dh."""
        e, ctx, ids = cache["e"], cache["ctx"], cache["ids"]
        dpre = dh * (1.0 - cache["h"] ** 2)
        grads["w1"] += e.T @ dpre
        grads["w2"] += np.outer(ctx, dpre.sum(axis=0))
        grads["b"] += dpre.sum(axis=0)
        de = dpre @ self.params["w1"].T
        dctx = dpre.sum(axis=0) @ self.params["w2"].T
        de += dctx / len(ids)
        np.add.at(grads["emb"], ids, de)

    def zero_grads(self):
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def relation_representation(seq, encoder) -> np.ndarray:
    """Concatenated mean-pooled hidden states of the head and tail ranges."""
    hidden = encoder.encode(seq.tokens)
    out = []
    for lo, hi in (seq.head_token_range, seq.tail_token_range):
        if hi <= lo:
            raise ValueError("empty entity token range")
        out.append(hidden[lo:hi].mean(axis=0))
    return np.concatenate(out)


@dataclass(frozen=True)
class LabelSpace:
    """Known class ids 0..|C^K|-1 followed by 2*|C^K| novel cluster slots."""

    known_classes: tuple[str, ...]
    slot_clusters: tuple  # cluster id per novel slot, None for unused slots

    @classmethod
    def build(cls, known_classes, novel_cluster_ids):
        known = tuple(known_classes)
        n_slots = 2 * len(known)
        clusters = sorted(novel_cluster_ids)
        if len(clusters) > n_slots:
            clusters = clusters[:n_slots]
        slots = tuple(clusters) + (None,) * (n_slots - len(clusters))
        return cls(known_classes=known, slot_clusters=slots)

    @property
    def n_classes(self):
        return 3 * len(self.known_classes)

    def id_for_known(self, name):
        try:
            return self.known_classes.index(name)
        except ValueError:
            raise ValueError(f"label {name!r} is not a known class") from None

    def id_for_cluster(self, cluster):
        for slot, c in enumerate(self.slot_clusters):
            if c == cluster:
                return len(self.known_classes) + slot
        raise ValueError(f"novel cluster {cluster} has no slot in the label space")

    def is_known_id(self, label_id):
        return 0 <= label_id < len(self.known_classes)

    def name_of(self, label_id):
        if self.is_known_id(label_id):
            return self.known_classes[label_id]
        slot = label_id - len(self.known_classes)
        cluster = self.slot_clusters[slot]
        return f"novel#{cluster}" if cluster is not None else f"slot#{slot}"


def head_loss_and_grad(w, b, x, y):
    """Mean cross-entropy of the softmax head and its analytic gradients.

    w: N x F, b: N, x: batch x F, y: batch of int labels.
    Returns (loss, dW, db).
    """
    logits = x @ w.T + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = len(y)
    loss = -np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean()
    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return float(loss), dlogits.T @ x, dlogits.sum(axis=0)


def softmax_probs(w, b, x):
    logits = x @ w.T + b
    logits -= logits.max(axis=1, keepdims=True)
    exp = np.exp(logits)
    return exp / exp.sum(axis=1, keepdims=True)


class Adam:
    """Adam with optional decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for key, grad in grads.items():
            p = self.params[key]
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad * grad
            update = (self.m[key] / b1c) / (np.sqrt(self.v[key] / b2c) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p
            p -= self.lr * update


def _clip_grads(grads, max_norm):
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return grads


@dataclass
class TrainedHead:
    weights: np.ndarray  # N x 2H
    bias: np.ndarray     # N
    label_space: LabelSpace
    loss_trace: list[float] = field(default_factory=list)
    encoder_kind: str = "stub"


def _training_set(gold, weak, weak_instances, label_space):
    items = []
    for inst in gold:
        items.append((inst, label_space.id_for_known(inst.gold_class)))
    by_uid = {i.uid: i for i in weak_instances}
    for uid, cluster, _quality in (weak.entries if weak is not None else []):
        label = label_space.id_for_cluster(cluster)
        if uid not in by_uid:
            raise ValueError(f"weak label uid={uid} has no instance")
        items.append((by_uid[uid], label))
    return items


def train_classifier(gold, weak, weak_instances, label_space, encoder,
                     epochs=5, lr=1e-3, seed=41, batch_size=128, dropout=0.2,
                     grad_clip=1.0) -> TrainedHead:
    """Cross-entropy training of the softmax head over gold plus weak labels.

    With a trainable encoder the gradients flow into it as well.  Duplicated
    training instances simply contribute twice; no dedup.
    """
    items = _training_set(gold, weak, weak_instances, label_space)
    if not items:
        raise ValueError("no training instances")
    sequences = [encode_with_markers(inst) for inst, _ in items]
    labels = np.array([label for _, label in items])

    feat_dim = 2 * encoder.hidden_dim
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=0.01, size=(label_space.n_classes, feat_dim))
    b = np.zeros(label_space.n_classes)

    head_params = {"w": w, "b": b}
    opt = Adam(head_params, lr=lr)
    enc_opt = Adam(encoder.params, lr=lr) if encoder.trainable else None

    frozen_features = None
    if not encoder.trainable:
        frozen_features = np.stack(
            [relation_representation(s, encoder) for s in sequences])

    order = list(range(len(items)))
    shuffle_rng = random.Random(seed)
    trace = []
    for _ in range(epochs):
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), batch_size):
            batch = order[lo:lo + batch_size]
            caches = None
            if frozen_features is not None:
                feats = frozen_features[batch]
            else:
                feats, caches = [], []
                for i in batch:
                    h, cache = encoder.forward(sequences[i].tokens)
                    pooled = [h[r0:r1].mean(axis=0)
                              for r0, r1 in (sequences[i].head_token_range,
                                             sequences[i].tail_token_range)]
                    feats.append(np.concatenate(pooled))
                    caches.append(cache)
                feats = np.stack(feats)

            mask = None
            if dropout > 0:
                mask = (rng.random(feats.shape) >= dropout) / (1.0 - dropout)
                feats = feats * mask

            loss, dw, db = head_loss_and_grad(w, b, feats, labels[batch])
            grads = _clip_grads({"w": dw, "b": db}, grad_clip)
            if caches is not None:
                dfeats = softmax_probs(w, b, feats)
                dfeats[np.arange(len(batch)), labels[batch]] -= 1.0
                dfeats = (dfeats / len(batch)) @ w
                if mask is not None:
                    dfeats = dfeats * mask
                enc_grads = encoder.zero_grads()
                half = encoder.hidden_dim
                for row, (i, cache) in enumerate(zip(batch, caches)):
                    seq = sequences[i]
                    dh = np.zeros_like(cache["h"])
                    for offset, (r0, r1) in ((0, seq.head_token_range),
                                             (half, seq.tail_token_range)):
                        dh[r0:r1] += dfeats[row, offset:offset + half] / (r1 - r0)
                    encoder.backward(cache, dh, enc_grads)
                enc_opt.step(_clip_grads(enc_grads, grad_clip))
            opt.step(grads)
            epoch_loss += loss
            n_batches += 1
        trace.append(epoch_loss / max(n_batches, 1))

    return TrainedHead(weights=w, bias=b, label_space=label_space,
                       loss_trace=trace,
                       encoder_kind="desk" if encoder.trainable else "stub")


def predict(instances, head, encoder, label_space=None):
    """argmax label id and max softmax probability per instance, keyed by UID."""
    if not instances:
        return {}
    feats = np.stack([
        relation_representation(encode_with_markers(inst), encoder)
        for inst in instances
    ])
    probs = softmax_probs(head.weights, head.bias, feats)
    labels = probs.argmax(axis=1)
    return {inst.uid: (int(labels[i]), float(probs[i, labels[i]]))
            for i, inst in enumerate(instances)}


def save_head(head, path) -> None:
    """Text header (label space and shapes) followed by float32-le weights."""
    header = {
        "n_classes": head.label_space.n_classes,
        "feature_dim": head.weights.shape[1],
        "known_classes": list(head.label_space.known_classes),
        "slot_clusters": list(head.label_space.slot_clusters),
        "encoder_kind": head.encoder_kind,
        "loss_trace": [round(float(v), 8) for v in head.loss_trace],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        fh.write(np.asarray(head.weights, dtype="<f4").tobytes())
        fh.write(np.asarray(head.bias, dtype="<f4").tobytes())


def load_head(path) -> TrainedHead:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    n, f = header["n_classes"], header["feature_dim"]
    body = raw[newline + 1:]
    w = np.frombuffer(body[:4 * n * f], dtype="<f4").reshape(n, f).astype(np.float64)
    b = np.frombuffer(body[4 * n * f:4 * n * f + 4 * n],
                      dtype="<f4").astype(np.float64)
    space = LabelSpace(
        known_classes=tuple(header["known_classes"]),
        slot_clusters=tuple(header["slot_clusters"]),
    )
    return TrainedHead(weights=w, bias=b, label_space=space,
                       loss_trace=list(header.get("loss_trace", [])),
                       encoder_kind=header.get("encoder_kind", "stub"))


def save_predictions(predictions, label_space, path) -> None:
    lines = ["uid,label_id,label_name,confidence"]
    for uid in sorted(predictions):
        label_id, conf = predictions[uid]
        lines.append(f"{uid},{label_id},{label_space.name_of(label_id)},{conf:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_predictions(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    out = {}
    for line in lines[1:]:
        uid, label_id, _name, conf = line.split(",")
        out[int(uid)] = (int(label_id), float(conf))
    return out

"""Prompt construction, joint-mask training batches, and ranked mask predictions.

The prompt template appends "<head tokens> [MASK]... <tail tokens>" to the
sentence.  Training examples mask the relation-name tokens plus a fraction of
random sentence tokens; inference uses a single mask slot and ranks candidate
tokens either constrained to the sentence or over the whole vocabulary.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hashutil import unit_score

MASK_TOKEN = "[MASK]"

_PREFIX_RE = re.compile(r"^[A-Za-z]+:")
_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


@dataclass
class MaskedExample:
    """A token sequence with mask slots, aligned targets, and per-slot origins."""

    tokens: list[str]
    mask_positions: list[int]
    mask_targets: list[str]
    origins: list[str]  # "relation_mask" or "random_mask" per position


@dataclass
class TokenRanking:
    """Tokens ordered by non-increasing score; constrained or unconstrained."""

    entries: list[tuple[str, float]]
    mode: str

    def top(self, n):
        return [tok for tok, _ in self.entries[:n]]

    @property
    def top_score(self):
        return self.entries[0][1]


def normalize_relation_name(name) -> list[str]:
    """Split a dataset relation label into lowercase words.

    Strips "org:"/"per:"-style prefixes, then splits on underscores, slashes,
    hyphens, whitespace, and camel-case boundaries.
    """
    stripped = _PREFIX_RE.sub("", name)
    stripped = _CAMEL_RE.sub(" ", stripped)
    words = [w.lower() for w in re.split(r"[_/\-\s]+", stripped) if w]
    return words or [name.lower()]


def build_prompt_text(instance, n_masks=1):
    """Sentence tokens followed by the head-[MASK]*n-tail template.

    Returns (tokens, mask_positions).
    """
    if n_masks < 1:
        raise ValueError(f"n_masks must be >= 1, got {n_masks}")
    head = list(instance.head_tokens)
    tail = list(instance.tail_tokens)
    tokens = list(instance.tokens) + head + [MASK_TOKEN] * n_masks + tail
    start = len(instance.tokens) + len(head)
    return tokens, list(range(start, start + n_masks))


def make_training_batch(instances, mask_rate=0.15, seed=0) -> list[MaskedExample]:
    """Joint-mask training examples: relation-name masks plus random masks.

    Per instance the relation name (normalized) determines the template mask
    count; floor(mask_rate * sentence length) additional sentence tokens are
    masked at random, never inside the entity spans.
    """
    if not instances:
        raise ValueError("cannot build a training batch from zero instances")
    rng = random.Random(seed)
    examples = []
    for inst in instances:
        if inst.gold_class is None:
            raise ValueError(f"instance uid={inst.uid} has no gold class")
        relation_words = normalize_relation_name(inst.gold_class)
        tokens, rel_positions = build_prompt_text(inst, n_masks=len(relation_words))

        protected = set(range(*inst.head_span)) | set(range(*inst.tail_span))
        eligible = [i for i in range(len(inst.tokens)) if i not in protected]
        n_random = min(math.floor(mask_rate * len(inst.tokens)), len(eligible))
        random_positions = sorted(rng.sample(eligible, n_random))

        positions, targets, origins = [], [], []
        for pos, target in sorted(
                [(p, w) for p, w in zip(rel_positions, relation_words)]
                + [(p, tokens[p]) for p in random_positions]):
            positions.append(pos)
            targets.append(target)
            origins.append("relation_mask" if pos in rel_positions else "random_mask")
            tokens[pos] = MASK_TOKEN
        examples.append(MaskedExample(tokens, positions, targets, origins))
    return examples


def build_vocabulary(instances, extra_tokens=()) -> list[str]:
    """Corpus vocabulary in first-seen order, plus any extra tokens."""
    seen = dict.fromkeys(tok for inst in instances for tok in inst.tokens)
    for tok in extra_tokens:
        seen.setdefault(tok)
    return list(seen)


def hold_out_relations(instances, n_holdout=5, seed=0, exclude=None):
    """Split labeled instances by relation for early-stopping validation.

    Holds out up to n_holdout relations (never the excluded negative class),
    keeping at least two relations in training.  Returns
    (train_instances, val_instances, held_out_classes).
    """
    classes = sorted({i.gold_class for i in instances} - {exclude, None})
    n_held = min(n_holdout, max(len(classes) - 2, 0))
    held = set(random.Random(seed).sample(classes, n_held))
    train = [i for i in instances if i.gold_class not in held]
    val = [i for i in instances if i.gold_class in held]
    return train, val, sorted(held)


class MlmBackend:
    """Scores each mask slot over a fixed vocabulary."""

    vocabulary: list[str]
    trainable = False

    def score_masks(self, tokens, mask_positions):
        """Per-slot score vectors of length len(vocabulary)."""
        raise NotImplementedError

    @property
    def vocab_index(self):
        idx = getattr(self, "_vocab_index", None)
        if idx is None:
            idx = {tok: i for i, tok in enumerate(self.vocabulary)}
            self._vocab_index = idx
        return idx


class StubMlmBackend(MlmBackend):
    """Deterministic backend: each token gets a fixed hash-seeded score.

    Per-token overrides let tests plant specific rankings.
    """

    def __init__(self, vocabulary, seed=0, overrides=None):
        self.vocabulary = list(vocabulary)
        self.seed = seed
        self.overrides = dict(overrides or {})
        scores = np.array([unit_score(seed, tok) for tok in self.vocabulary])
        for tok, value in self.overrides.items():
            if tok in self.vocab_index:
                scores[self.vocab_index[tok]] = value
        self._scores = scores

    def score_masks(self, tokens, mask_positions):
        return [self._scores.copy() for _ in mask_positions]


class TinyMlmBackend(MlmBackend):
    """Small trainable bag-of-context model predicting masked tokens.

    Each mask slot is scored from the mean embedding of the non-mask tokens in
    the sequence, through a linear output layer with softmax.
    """

    trainable = True

    def __init__(self, vocabulary, dim=32, seed=0):
        self.vocabulary = list(vocabulary)
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng(seed)
        v = len(self.vocabulary)
        self.emb = rng.normal(scale=0.1, size=(v, dim))
        self.out = rng.normal(scale=0.1, size=(dim, v))
        self.bias = np.zeros(v)

    def _context(self, tokens):
        ids = [self.vocab_index[t] for t in tokens
               if t != MASK_TOKEN and t in self.vocab_index]
        if not ids:
            return np.zeros(self.dim), ids
        return self.emb[ids].mean(axis=0), ids

    def score_masks(self, tokens, mask_positions):
        h, _ = self._context(tokens)
        logits = h @ self.out + self.bias
        logits -= logits.max()
        probs = np.exp(logits)
        probs /= probs.sum()
        return [probs.copy() for _ in mask_positions]

    def _example_loss_and_update(self, example, lr):
        h, ids = self._context(example.tokens)
        logits = h @ self.out + self.bias
        logits -= logits.max()
        probs = np.exp(logits)
        probs /= probs.sum()
        loss = 0.0
        dlogits = np.zeros_like(probs)
        n_slots = 0
        for target in example.mask_targets:
            tid = self.vocab_index.get(target)
            if tid is None:
                continue
            loss -= math.log(max(probs[tid], 1e-300))
            dlogits += probs
            dlogits[tid] -= 1.0
            n_slots += 1
        if n_slots == 0:
            return None
        dlogits /= n_slots
        if lr > 0:
            dh = self.out @ dlogits
            self.out -= lr * np.outer(h, dlogits)
            self.bias -= lr * dlogits
            if ids:
                self.emb[ids] -= lr * dh / len(ids)
        return loss / n_slots

    def perplexity(self, examples) -> float:
        losses = [self._example_loss_and_update(ex, lr=0.0) for ex in examples]
        losses = [x for x in losses if x is not None]
        if not losses:
            return float("inf")
        return math.exp(sum(losses) / len(losses))

    def train(self, examples, epochs=20, lr=0.1, seed=0, val_examples=None,
              patience=2):
        """SGD over examples; early stopping on held-out perplexity when given."""
        rng = random.Random(seed)
        order = list(range(len(examples)))
        history = {"train_loss": [], "val_perplexity": []}
        best = (float("inf"), None)
        stale = 0
        for _ in range(epochs):
            rng.shuffle(order)
            losses = []
            for i in order:
                loss = self._example_loss_and_update(examples[i], lr)
                if loss is not None:
                    losses.append(loss)
            history["train_loss"].append(
                sum(losses) / len(losses) if losses else float("nan"))
            if val_examples:
                ppl = self.perplexity(val_examples)
                history["val_perplexity"].append(ppl)
                if ppl < best[0]:
                    best = (ppl, (self.emb.copy(), self.out.copy(), self.bias.copy()))
                    stale = 0
                else:
                    stale += 1
                    if stale > patience:
                        break
        if val_examples and best[1] is not None:
            self.emb, self.out, self.bias = best[1]
        return history


def rank_tokens_constrained(instance, backend) -> TokenRanking:
    """Rank the instance's own tokens by single-mask prompt score."""
    tokens, positions = build_prompt_text(instance, n_masks=1)
    scores = backend.score_masks(tokens, positions)[0]
    index = backend.vocab_index
    candidates = [t for t in dict.fromkeys(instance.tokens) if t in index]
    if not candidates:
        raise ValueError("no in-vocabulary sentence tokens")
    ordered = sorted(candidates, key=lambda t: (-scores[index[t]], index[t]))
    return TokenRanking([(t, float(scores[index[t]])) for t in ordered],
                        mode="constrained")


def rank_tokens_unconstrained(instance, backend) -> TokenRanking:
    """Rank the whole backend vocabulary by single-mask prompt score."""
    tokens, positions = build_prompt_text(instance, n_masks=1)
    scores = backend.score_masks(tokens, positions)[0]
    order = np.lexsort((np.arange(len(scores)), -scores))
    entries = [(backend.vocabulary[i], float(scores[i])) for i in order]
    return TokenRanking(entries, mode="unconstrained")


def save_rankings(rankings, path, top_k=10) -> None:
    """Persist per-UID rankings as JSONL rows of (uid, mode, entries)."""
    lines = []
    for uid in sorted(rankings):
        for ranking in rankings[uid]:
            lines.append(json.dumps({
                "uid": uid,
                "mode": ranking.mode,
                "entries": [[t, s] for t, s in ranking.entries[:top_k]],
            }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def load_rankings(path) -> dict[int, dict[str, TokenRanking]]:
    out: dict[int, dict[str, TokenRanking]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        ranking = TokenRanking([(t, float(s)) for t, s in doc["entries"]],
                               mode=doc["mode"])
        out.setdefault(int(doc["uid"]), {})[doc["mode"]] = ranking
    return out


def save_backend(backend, path) -> None:
    """Checkpoint a backend: JSON metadata plus an .npz weight sidecar."""
    path = Path(path)
    if isinstance(backend, StubMlmBackend):
        meta = {"kind": "stub", "seed": backend.seed,
                "overrides": backend.overrides, "vocabulary": backend.vocabulary}
    elif isinstance(backend, TinyMlmBackend):
        meta = {"kind": "tiny_trainable", "seed": backend.seed,
                "dim": backend.dim, "vocabulary": backend.vocabulary}
        np.savez(path.with_suffix(".npz"), emb=backend.emb, out=backend.out,
                 bias=backend.bias)
    else:
        raise ValueError(f"cannot checkpoint backend of type {type(backend).__name__}")
    path.write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")


def load_backend(path) -> MlmBackend:
    path = Path(path)
    meta = json.loads(path.read_text(encoding="utf-8"))
    if meta["kind"] == "stub":
        return StubMlmBackend(meta["vocabulary"], seed=meta["seed"],
                              overrides=meta.get("overrides"))
    if meta["kind"] == "tiny_trainable":
        backend = TinyMlmBackend(meta["vocabulary"], dim=meta["dim"],
                                 seed=meta["seed"])
        weights = np.load(path.with_suffix(".npz"))
        backend.emb = weights["emb"]
        backend.out = weights["out"]
        backend.bias = weights["bias"]
        return backend
    raise ValueError(f"unknown backend kind {meta['kind']!r}")


def build_backend(kind, vocabulary, seed=0, dim=32) -> MlmBackend:
    """Construct a backend from a config key: stub, tiny_trainable, or
    pretrained_checkpoint:<path> (a previously saved backend checkpoint)."""
    if kind == "stub":
        return StubMlmBackend(vocabulary, seed=seed)
    if kind == "tiny_trainable":
        return TinyMlmBackend(vocabulary, dim=dim, seed=seed)
    if kind.startswith("pretrained_checkpoint:"):
        return load_backend(kind.split(":", 1)[1])
    raise ValueError(f"unknown prompt backend {kind!r}")

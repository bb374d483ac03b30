"""Gaussian-mixture clustering with meta-type adjustment, majority-vote
bifurcation into known/novel cluster sets, and quality-ranked weak labels.

The mixture uses diagonal covariances with a variance floor; representations
can reach ~1500 dimensions at full scale, where full covariances are singular.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .metatype import MetaTypePair

VARIANCE_FLOOR = 1e-6


@dataclass
class GaussianMixture:
    means: np.ndarray       # K x D
    variances: np.ndarray   # K x D, diagonal
    weights: np.ndarray     # K, sums to 1
    log_likelihood_trace: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def n_components(self):
        return len(self.weights)


@dataclass
class ClusterState:
    """Cluster assignments plus the known/novel bifurcation bookkeeping."""

    assignments: dict[int, int]
    posteriors: dict[int, np.ndarray]
    n_clusters: int
    cluster_meta: dict[int, MetaTypePair] = field(default_factory=dict)
    votes: dict[int, int] = field(default_factory=dict)
    known_clusters: frozenset[int] = frozenset()
    novel_clusters: frozenset[int] = frozenset()
    labeled_uids: frozenset[int] = frozenset()

    def members(self, cluster):
        return sorted(u for u, c in self.assignments.items() if c == cluster)


@dataclass
class WeakLabelSet:
    """Selected (uid, novel cluster, posterior quality) triples."""

    entries: list[tuple[int, int, float]]
    percent: float

    def uids(self):
        return [uid for uid, _, _ in self.entries]


def _log_gaussian_prob(x, means, variances, log_weights):
    """N x K matrix of log w_k + log N(x | mu_k, diag(var_k))."""
    n, d = x.shape
    k = len(log_weights)
    out = np.empty((n, k))
    for j in range(k):
        diff = x - means[j]
        out[:, j] = -0.5 * (d * math.log(2.0 * math.pi)
                            + np.log(variances[j]).sum()
                            + (diff * diff / variances[j]).sum(axis=1))
    return out + log_weights


def _logsumexp_rows(a):
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def _kmeanspp_means(x, k, rng):
    """k-means++ style seeding: spread initial means over the data."""
    n = x.shape[0]
    chosen = [rng.integers(n)]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            chosen.append(rng.integers(n))
        else:
            chosen.append(rng.choice(n, p=d2 / total))
        d2 = np.minimum(d2, ((x - x[chosen[-1]]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _reseed_empty_components(x, log_prob, empty, means, variances, mass,
                             init_var):
    """Move each empty component onto the least-explained (farthest) point."""
    point_ll = _logsumexp_rows(log_prob)
    for j in empty:
        far = int(np.argmin(point_ll))
        point_ll[far] = np.inf
        means[j] = x[far]
        variances[j] = init_var
        mass[j] = 1.0
    return mass / mass.sum()


def _fit_single(x, k, seed, max_iter, tol):
    n, d = x.shape
    rng = np.random.default_rng(seed)
    means = _kmeanspp_means(x, k, rng)
    init_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    variances = np.tile(init_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    trace: list[float] = []
    reseeds = 0
    prev_ll = None
    log_resp = None
    converged = False
    for _ in range(max_iter):
        log_prob = _log_gaussian_prob(x, means, variances, np.log(weights))
        row_norm = _logsumexp_rows(log_prob)
        ll = float(row_norm.sum())
        log_resp = log_prob - row_norm[:, None]
        trace.append(ll)
        if prev_ll is not None and abs(ll - prev_ll) < tol:
            converged = True
            break
        prev_ll = ll

        resp = np.exp(log_resp)
        mass = resp.sum(axis=0)
        empty = np.flatnonzero(mass < 1e-10)
        if empty.size:
            reseeds += len(empty)
            if reseeds > 3:
                raise ValueError(
                    f"degenerate mixture: {reseeds} component re-seeds exceeded")
            weights = _reseed_empty_components(x, log_prob, empty, means,
                                               variances, mass, init_var)
            # the trace restarts after a re-seed; EM resumes from new parameters
            trace = []
            prev_ll = None
            continue

        weights = mass / n
        means = (resp.T @ x) / mass[:, None]
        ex2 = (resp.T @ (x * x)) / mass[:, None]
        variances = np.maximum(ex2 - means * means, VARIANCE_FLOOR)
    if not trace:
        # a re-seed on the final iteration cleared it; score once more
        log_prob = _log_gaussian_prob(x, means, variances, np.log(weights))
        row_norm = _logsumexp_rows(log_prob)
        trace.append(float(row_norm.sum()))
        log_resp = log_prob - row_norm[:, None]
    mixture = GaussianMixture(means=means, variances=variances, weights=weights,
                              log_likelihood_trace=trace, converged=converged)
    return mixture, trace[-1], log_resp


def fit_gmm(matrix, k, seed, max_iter=200, tol=1e-4, n_init=5, uids=None):
    """EM fit with n_init seeded restarts; the best final log-likelihood wins.

    Returns (GaussianMixture, ClusterState) with posteriors keyed by UID
    (row order = ascending UID) and assignments by argmax posterior.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("matrix must be 2-dimensional")
    n = x.shape[0]
    if n < k:
        raise ValueError(f"need at least {k} rows to fit {k} components, got {n}")
    if uids is None:
        uids = list(range(1, n + 1))
    if len(uids) != n:
        raise ValueError("uids length must match matrix rows")

    best = None
    for i in range(n_init):
        mixture, ll, log_resp = _fit_single(x, k, seed + i, max_iter, tol)
        if best is None or ll > best[1]:
            best = (mixture, ll, log_resp)
    mixture, _, log_resp = best

    resp = np.exp(log_resp)
    resp /= resp.sum(axis=1, keepdims=True)
    labels = resp.argmax(axis=1)
    state = ClusterState(
        assignments={uid: int(c) for uid, c in zip(uids, labels)},
        posteriors={uid: resp[i] for i, uid in enumerate(uids)},
        n_clusters=k,
    )
    return mixture, state


def adjust_by_metatype(state, mixture, meta, top_fraction=0.30,
                       metric="posterior", matrix=None,
                       uid_rows=None) -> ClusterState:
    """Assign each cluster the modal meta-type pair of its most confident
    members, then move every instance to the nearest cluster among those
    sharing its pair.

    "Nearest" is highest posterior by default; metric="euclidean" instead
    uses distance to the mixture means (requires mixture, matrix, uid_rows).
    Instances whose pair matches no cluster meta keep their assignment.
    Runs once; empty clusters get no meta.
    """
    missing = [u for u in state.assignments if u not in meta]
    if missing:
        raise ValueError(f"missing meta-type pairs for uids: {sorted(missing)[:10]}")
    if metric not in ("posterior", "euclidean"):
        raise ValueError(f"unknown adjustment metric {metric!r}")
    if metric == "euclidean":
        if mixture is None or matrix is None or uid_rows is None:
            raise ValueError(
                "euclidean adjustment needs the mixture, matrix, and uid_rows")
        row_of = {uid: i for i, uid in enumerate(uid_rows)}

    cluster_meta: dict[int, MetaTypePair] = {}
    for c in range(state.n_clusters):
        members = state.members(c)
        if not members:
            continue
        k_top = math.ceil(top_fraction * len(members))
        top = sorted(members, key=lambda u: (-state.posteriors[u][c], u))[:k_top]
        tally = Counter(meta[u] for u in top)
        best_count = max(tally.values())
        cluster_meta[c] = min(p for p, n in tally.items() if n == best_count)

    by_pair: dict[MetaTypePair, list[int]] = {}
    for c, pair in cluster_meta.items():
        by_pair.setdefault(pair, []).append(c)

    assignments = {}
    for uid, current in state.assignments.items():
        candidates = by_pair.get(meta[uid])
        if not candidates:
            assignments[uid] = current
        elif metric == "posterior":
            assignments[uid] = max(candidates,
                                   key=lambda c: (state.posteriors[uid][c], -c))
        else:
            x = matrix[row_of[uid]]
            assignments[uid] = min(
                candidates,
                key=lambda c: (float(((x - mixture.means[c]) ** 2).sum()), c))
    return replace(state, assignments=assignments, cluster_meta=cluster_meta)


def bifurcate_majority_vote(state, labeled_uids, n_known_classes=None) -> ClusterState:
    """Split clusters into known vs novel sets by labeled-instance votes.

    A cluster is known when its labeled density exceeds the global labeled
    fraction.  If either set comes out empty, fall back to declaring the top
    n_known_classes clusters by vote count known.
    """
    labeled = frozenset(labeled_uids) & set(state.assignments)
    total = len(state.assignments)
    global_fraction = len(labeled) / total if total else 0.0

    votes = {c: 0 for c in range(state.n_clusters)}
    sizes = {c: 0 for c in range(state.n_clusters)}
    for uid, c in state.assignments.items():
        sizes[c] += 1
        if uid in labeled:
            votes[c] += 1

    known = {c for c in votes
             if sizes[c] > 0 and votes[c] / sizes[c] > global_fraction}
    novel = set(votes) - known

    if not known or not novel:
        if n_known_classes is None:
            raise ValueError(
                "degenerate bifurcation needs n_known_classes for the fallback")
        by_votes = sorted(votes, key=lambda c: (-votes[c], c))
        n_k = max(1, min(n_known_classes, state.n_clusters - 1))
        known = set(by_votes[:n_k])
        novel = set(by_votes[n_k:])

    return replace(state, votes=votes, known_clusters=frozenset(known),
                   novel_clusters=frozenset(novel), labeled_uids=labeled)


def select_weak_labels(state, posteriors=None, percent=15) -> WeakLabelSet:
    """Top-percent members of each novel cluster by posterior, as weak labels.

    Per cluster of size s, max(1, ceil(percent/100 * s)) unlabeled members are
    selected; labeled instances never receive weak labels.
    """
    if not state.novel_clusters:
        raise ValueError("no novel clusters to select weak labels from")
    if posteriors is None:
        posteriors = state.posteriors
    entries: list[tuple[int, int, float]] = []
    for c in sorted(state.novel_clusters):
        members = state.members(c)
        if not members:
            continue
        want = max(1, math.ceil(percent / 100.0 * len(members)))
        candidates = [u for u in members if u not in state.labeled_uids]
        candidates.sort(key=lambda u: (-posteriors[u][c], u))
        entries.extend((u, c, float(posteriors[u][c]))
                       for u in candidates[:want])
    return WeakLabelSet(entries=entries, percent=percent)


def save_cluster_state(state, path, mixture=None, weak_labels=None,
                       representation_checksum=None) -> None:
    doc = {
        "n_clusters": state.n_clusters,
        "assignments": {str(u): c for u, c in state.assignments.items()},
        "posteriors": {str(u): [float(p) for p in v]
                       for u, v in state.posteriors.items()},
        "cluster_meta": {str(c): list(p) for c, p in state.cluster_meta.items()},
        "votes": {str(c): v for c, v in state.votes.items()},
        "known_clusters": sorted(state.known_clusters),
        "novel_clusters": sorted(state.novel_clusters),
        "labeled_uids": sorted(state.labeled_uids),
        "representation_checksum": representation_checksum,
    }
    if mixture is not None:
        doc["log_likelihood_trace"] = [float(v) for v in
                                       mixture.log_likelihood_trace]
        doc["converged"] = mixture.converged
    if weak_labels is not None:
        doc["weak_label_percent"] = weak_labels.percent
        doc["weak_labels"] = [[u, c, q] for u, c, q in weak_labels.entries]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_cluster_state(path):
    """Returns (ClusterState, extras dict with checksum/trace/weak labels)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    state = ClusterState(
        assignments={int(u): int(c) for u, c in doc["assignments"].items()},
        posteriors={int(u): np.asarray(v, dtype=np.float64)
                    for u, v in doc["posteriors"].items()},
        n_clusters=int(doc["n_clusters"]),
        cluster_meta={int(c): MetaTypePair(*p)
                      for c, p in doc["cluster_meta"].items()},
        votes={int(c): int(v) for c, v in doc["votes"].items()},
        known_clusters=frozenset(doc["known_clusters"]),
        novel_clusters=frozenset(doc["novel_clusters"]),
        labeled_uids=frozenset(doc["labeled_uids"]),
    )
    extras = {
        "representation_checksum": doc.get("representation_checksum"),
        "log_likelihood_trace": doc.get("log_likelihood_trace", []),
        "weak_labels": None,
    }
    if "weak_labels" in doc:
        extras["weak_labels"] = WeakLabelSet(
            entries=[(int(u), int(c), float(q)) for u, c, q in doc["weak_labels"]],
            percent=doc.get("weak_label_percent", 15),
        )
    return state, extras

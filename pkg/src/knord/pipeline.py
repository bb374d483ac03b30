"""Stage orchestration: split -> resolve_types -> train_prompt -> represent ->
cluster -> classify -> evaluate.

Every stage writes its artifacts atomically into one output directory plus a
manifest recording the config hash, input/output checksums, and wall time, so
reruns are checkable and stale upstream artifacts are detected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classifier, clustering, corpus, evaluation, metatype, prompting
from . import report as reporting
from . import representation

log = logging.getLogger("knord")

STAGES = ("split", "resolve_types", "train_prompt", "represent", "cluster",
          "classify", "evaluate")

_STAGE_DEPS = {
    "split": (),
    "resolve_types": ("split",),
    "train_prompt": ("split",),
    "represent": ("split", "train_prompt"),
    "cluster": ("split", "resolve_types", "represent"),
    "classify": ("split", "cluster"),
    "evaluate": ("split", "cluster", "classify"),
}

# provenance of every numeric default: a reported value ("paper") or an
# implementation choice ("decision")
PARAM_SOURCES = {
    "labeled_fraction": "paper",
    "mask_rate": "paper",
    "n_top_tokens": "paper",
    "top_fraction": "paper",
    "weak_label_percent": "paper",
    "k_multiplier": "decision",
    "seed": "paper",
    "embedder_dim": "decision",
    "prompt_dim": "decision",
    "prompt_epochs": "decision",
    "prompt_lr": "decision",
    "holdout_relations": "paper",
    "encoder_hidden": "decision",
    "epochs": "paper",
    "lr": "decision",
    "batch_size": "paper",
    "dropout": "paper",
    "grad_clip": "paper",
    "gmm_max_iter": "decision",
    "gmm_tol": "decision",
    "gmm_restarts": "decision",
    "include_negative_in_scores": "decision",
}


class StageError(RuntimeError):
    """Pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    dataset_path: str = ""
    dataset_format: str = "generic_jsonl"
    negatives_path: str | None = None
    negative_class: str | None = None
    frequencies_path: str | None = None
    metatype_source: str = "types"  # types | fixture | live
    ontology_path: str | None = None
    kb_endpoint: str = "https://www.wikidata.org/wiki/Special:EntityData"
    out_dir: str = "knord_out"
    name: str = "run"
    seed: int = 41
    labeled_fraction: float = 0.85
    mask_rate: float = 0.15
    n_top_tokens: int = 3
    top_fraction: float = 0.30
    adjust_metric: str = "posterior"  # or "euclidean"
    weak_label_percent: float = 15.0
    k_multiplier: int = 3
    prompt_backend: str = "stub"
    prompt_dim: int = 32
    prompt_epochs: int = 20
    prompt_lr: float = 0.1
    holdout_relations: int = 5
    encoder_backend: str = "stub"
    encoder_hidden: int = 32
    embedder_dim: int = 64
    epochs: int = 5
    lr: float = 1e-3
    batch_size: int = 128
    dropout: float = 0.2
    grad_clip: float = 1.0
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-4
    gmm_restarts: int = 5
    include_negative_in_scores: bool = True

    @property
    def setting(self):
        return f"{self.name}-seed{self.seed}"

    def hash(self) -> str:
        doc = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()

    def annotated_params(self):
        values = dataclasses.asdict(self)
        return {key: {"value": values[key], "source": source}
                for key, source in sorted(PARAM_SOURCES.items())}


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False,
                "yes": True, "no": False}
_PATH_KEYS = {"dataset_path", "negatives_path", "frequencies_path",
              "ontology_path", "out_dir"}


def parse_config(path, seed=None, out_dir=None) -> PipelineConfig:
    """Parse a flat key=value config file; relative paths resolve against the
    config file's directory.  seed/out_dir arguments override file values."""
    path = Path(path)
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    values: dict = {"name": path.stem}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in fields:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        ftype = fields[key].type
        if "bool" in ftype:
            if raw.lower() not in _BOOL_VALUES:
                raise ValueError(f"{path}:{lineno}: bad boolean {raw!r}")
            values[key] = _BOOL_VALUES[raw.lower()]
        elif "int" in ftype:
            values[key] = int(raw)
        elif "float" in ftype:
            values[key] = float(raw)
        else:
            values[key] = raw
    base = path.parent
    for key in _PATH_KEYS & values.keys():
        if values[key]:
            values[key] = str((base / values[key]).resolve()
                              if not Path(values[key]).is_absolute()
                              else Path(values[key]))
    cfg = PipelineConfig(**values)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = dataclasses.replace(cfg, out_dir=str(Path(out_dir).resolve()))
    if not cfg.dataset_path:
        raise ValueError("config must set dataset_path")
    return cfg


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class ArtifactStore:
    """Flat-file store for stage artifacts and their manifests."""

    def __init__(self, outdir):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        return self.outdir / name

    def manifest_path(self, stage) -> Path:
        return self.outdir / f"manifest_{stage}.json"

    def read_manifest(self, stage):
        p = self.manifest_path(stage)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def require_upstream(self, stage, cfg):
        """Verify dependency manifests and checksums; returns input hashes."""
        inputs = {}
        for dep in _STAGE_DEPS[stage]:
            manifest = self.read_manifest(dep)
            if manifest is None:
                raise StageError(
                    stage, f"missing upstream artifacts; run '{dep}' first")
            for rel, digest in manifest["outputs"].items():
                current = self.path(rel)
                if not current.exists():
                    raise StageError(
                        stage, f"missing upstream artifacts; run '{dep}' first")
                if _sha256(current) != digest:
                    raise StageError(stage, f"stale upstream artifact: {rel}")
                inputs[rel] = digest
        return inputs

    def commit(self, stage, cfg, tmp, inputs, started):
        """Move staged files into place and write the stage manifest."""
        outputs = {}
        for p in sorted(tmp.rglob("*")):
            if not p.is_file():
                continue
            rel = p.relative_to(tmp)
            dest = self.outdir / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            os.replace(p, dest)
            outputs[str(rel)] = _sha256(dest)
        manifest = {
            "stage": stage,
            "config_hash": cfg.hash(),
            "params": cfg.annotated_params(),
            "inputs": inputs,
            "outputs": outputs,
            "wall_time_s": round(time.monotonic() - started, 3),
        }
        tmp_manifest = self.manifest_path(stage).with_suffix(".tmp")
        tmp_manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                                + "\n", encoding="utf-8")
        os.replace(tmp_manifest, self.manifest_path(stage))
        return outputs


def _load_split(store):
    instances = corpus.load_corpus(store.path("corpus.jsonl"))
    manifest = corpus.load_manifest(store.path("split.json"))
    return instances, manifest


def _check_ratio(name, value, low=0.0, high=1.0):
    if not low < value <= high:
        raise ValueError(f"{name} must be in ({low}, {high}], got {value}")


def _stage_split(cfg, store, tmp):
    data = corpus.load_corpus(cfg.dataset_path, cfg.dataset_format)
    if cfg.negatives_path:
        if not cfg.negative_class:
            raise ValueError("negatives_path requires negative_class")
        negatives = corpus.load_corpus(cfg.negatives_path, cfg.dataset_format)
        negatives = [dataclasses.replace(n, gold_class=cfg.negative_class)
                     if n.gold_class is None else n for n in negatives]
        data = corpus.augment_hard_negatives(data, negatives, cfg.negative_class)
    frequencies = None
    if cfg.frequencies_path:
        frequencies = json.loads(Path(cfg.frequencies_path).read_text("utf-8"))
    manifest = corpus.build_grd_split(
        data, frequencies=frequencies, labeled_fraction=cfg.labeled_fraction,
        seed=cfg.seed, negative_class=cfg.negative_class)
    corpus.save_corpus(data, tmp / "corpus.jsonl")
    corpus.save_manifest(manifest, tmp / "split.json")


def _stage_resolve_types(cfg, store, tmp):
    instances, _ = _load_split(store)
    resolver = None
    if cfg.metatype_source == "fixture":
        if not cfg.ontology_path:
            raise ValueError("metatype_source=fixture requires ontology_path")
        graph = metatype.OntologyGraph.from_file(cfg.ontology_path)
        resolver = metatype.MetaTypeResolver(
            graph, cache_path=store.path("metatype_cache.tsv"))
    elif cfg.metatype_source == "live":
        client = metatype.WikidataClient(cfg.kb_endpoint)
        resolver = metatype.MetaTypeResolver(
            client, cache_path=store.path("metatype_cache.tsv"))
    elif cfg.metatype_source != "types":
        raise ValueError(f"unknown metatype_source {cfg.metatype_source!r}")
    lines = []
    for inst in instances:
        pair = metatype.meta_type_of_pair(inst, resolver)
        lines.append(f"{inst.uid}\t{pair.head_meta}\t{pair.tail_meta}")
    (tmp / "metatypes.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_metatypes(store):
    pairs = {}
    for line in store.path("metatypes.tsv").read_text("utf-8").splitlines():
        uid, head, tail = line.split("\t")
        pairs[int(uid)] = metatype.MetaTypePair(head, tail)
    return pairs


def _stage_train_prompt(cfg, store, tmp):
    _check_ratio("mask_rate", cfg.mask_rate)
    instances, manifest = _load_split(store)
    relation_words = [w for c in manifest.known_classes
                      for w in prompting.normalize_relation_name(c)]
    vocab = prompting.build_vocabulary(instances, extra_tokens=relation_words)
    backend = prompting.build_backend(cfg.prompt_backend, vocab, seed=cfg.seed,
                                      dim=cfg.prompt_dim)
    if backend.trainable:
        labeled = [i for i in instances if i.uid in manifest.labeled_uids]
        train, val, held = prompting.hold_out_relations(
            labeled, n_holdout=cfg.holdout_relations, seed=cfg.seed,
            exclude=manifest.negative_class)
        train_batch = prompting.make_training_batch(
            train, mask_rate=cfg.mask_rate, seed=cfg.seed)
        val_batch = (prompting.make_training_batch(
            val, mask_rate=cfg.mask_rate, seed=cfg.seed) if val else None)
        history = backend.train(train_batch, epochs=cfg.prompt_epochs,
                                lr=cfg.prompt_lr, seed=cfg.seed,
                                val_examples=val_batch)
        log.info("train_prompt: held out %s; final train loss %.4f",
                 held or "nothing", history["train_loss"][-1])
    prompting.save_backend(backend, tmp / "prompt_backend.json")


def _stage_represent(cfg, store, tmp):
    if cfg.n_top_tokens < 1:
        raise ValueError(f"n_top_tokens must be >= 1, got {cfg.n_top_tokens}")
    instances, _ = _load_split(store)
    backend = prompting.load_backend(store.path("prompt_backend.json"))
    embedder = representation.HashEmbedder(dimension=cfg.embedder_dim,
                                           seed=cfg.seed)
    rankings = {}
    reps = []
    for inst in instances:
        constrained = prompting.rank_tokens_constrained(inst, backend)
        unconstrained = prompting.rank_tokens_unconstrained(inst, backend)
        rankings[inst.uid] = (constrained, unconstrained)
        reps.append(representation.build_representation(
            inst.uid, constrained, unconstrained, embedder, n=cfg.n_top_tokens))
    prompting.save_rankings(rankings, tmp / "rankings.jsonl")
    representation.write_representation_cache(reps, tmp / "representations.bin")


def _stage_cluster(cfg, store, tmp):
    _check_ratio("top_fraction", cfg.top_fraction)
    _check_ratio("weak_label_percent", cfg.weak_label_percent, high=100.0)
    if cfg.k_multiplier < 1:
        raise ValueError(f"k_multiplier must be >= 1, got {cfg.k_multiplier}")
    _, manifest = _load_split(store)
    matrix, uids = representation.read_representation_cache(
        store.path("representations.bin"))
    k = cfg.k_multiplier * len(manifest.known_classes)
    mixture, state = clustering.fit_gmm(
        matrix, k, seed=cfg.seed, max_iter=cfg.gmm_max_iter, tol=cfg.gmm_tol,
        n_init=cfg.gmm_restarts, uids=uids)
    meta = _load_metatypes(store)
    state = clustering.adjust_by_metatype(state, mixture, meta,
                                          top_fraction=cfg.top_fraction,
                                          metric=cfg.adjust_metric,
                                          matrix=matrix, uid_rows=uids)
    state = clustering.bifurcate_majority_vote(
        state, manifest.labeled_uids,
        n_known_classes=len(manifest.known_classes))
    weak = clustering.select_weak_labels(state, percent=cfg.weak_label_percent)
    clustering.save_cluster_state(
        state, tmp / "cluster_state.json", mixture=mixture, weak_labels=weak,
        representation_checksum=representation.file_checksum(
            store.path("representations.bin")))


def _build_encoder(cfg, vocab=None):
    if cfg.encoder_backend == "stub":
        return classifier.StubSequenceEncoder(hidden_dim=cfg.encoder_hidden,
                                              seed=cfg.seed)
    if cfg.encoder_backend == "desk":
        return classifier.DeskEncoder(vocab or [], hidden_dim=cfg.encoder_hidden,
                                      seed=cfg.seed)
    raise ValueError(f"unknown encoder backend {cfg.encoder_backend!r}")


def _stage_classify(cfg, store, tmp):
    instances, manifest = _load_split(store)
    state, extras = clustering.load_cluster_state(store.path("cluster_state.json"))
    current = representation.file_checksum(store.path("representations.bin")) \
        if store.path("representations.bin").exists() else None
    if extras["representation_checksum"] not in (None, current):
        raise ValueError("stale upstream artifact: representations.bin changed "
                         "since clustering")

    space = classifier.LabelSpace.build(manifest.known_classes,
                                        state.novel_clusters)
    weak = extras["weak_labels"] or clustering.select_weak_labels(
        state, percent=cfg.weak_label_percent)
    slotted = set(c for c in space.slot_clusters if c is not None)
    dropped = [e for e in weak.entries if e[1] not in slotted]
    if dropped:
        log.warning("classify: dropping %d weak labels from unslotted clusters",
                    len(dropped))
    weak = clustering.WeakLabelSet(
        entries=[e for e in weak.entries if e[1] in slotted],
        percent=weak.percent)

    by_uid = {i.uid: i for i in instances}
    gold = [by_uid[u] for u in sorted(manifest.labeled_uids)]
    weak_instances = [by_uid[u] for u in weak.uids()]
    vocab = None
    if cfg.encoder_backend == "desk":
        vocab = prompting.build_vocabulary(
            instances, extra_tokens=[*classifier.MARKER_TOKENS,
                                     classifier.TYPE_SEP])
    encoder = _build_encoder(cfg, vocab)
    head = classifier.train_classifier(
        gold, weak, weak_instances, space, encoder, epochs=cfg.epochs,
        lr=cfg.lr, seed=cfg.seed, batch_size=cfg.batch_size,
        dropout=cfg.dropout, grad_clip=cfg.grad_clip)
    unlabeled = [by_uid[u] for u in sorted(manifest.unlabeled_uids)]
    predictions = classifier.predict(unlabeled, head, encoder, space)
    classifier.save_head(head, tmp / "head.ckpt")
    classifier.save_predictions(predictions, space, tmp / "predictions.csv")


def _stage_evaluate(cfg, store, tmp):
    instances, manifest = _load_split(store)
    head = classifier.load_head(store.path("head.ckpt"))
    predictions = classifier.load_predictions(store.path("predictions.csv"))
    gold = {i.uid: i.gold_class for i in instances}
    result = evaluation.map_and_score(
        predictions, gold, head.label_space, manifest,
        include_negative=cfg.include_negative_in_scores)
    evaluation.save_report(result, tmp / "report.json")
    reporting.write_report_text(result, tmp / "report.txt")
    reporting.write_report_csv(result, tmp / "report.csv", setting=cfg.setting)

    _, extras = clustering.load_cluster_state(store.path("cluster_state.json"))
    known_set = set(manifest.known_classes)
    confidences = {"known": [], "novel": []}
    for uid, (_label, conf) in predictions.items():
        subset = "known" if gold[uid] in known_set else "novel"
        confidences[subset].append(conf)
    reporting.render_figures(result, tmp / "figures",
                             log_likelihood_trace=extras["log_likelihood_trace"],
                             confidences=confidences)
    return result


_STAGE_FUNCS = {
    "split": _stage_split,
    "resolve_types": _stage_resolve_types,
    "train_prompt": _stage_train_prompt,
    "represent": _stage_represent,
    "cluster": _stage_cluster,
    "classify": _stage_classify,
    "evaluate": _stage_evaluate,
}


def run_stage(name, cfg):
    """Run one stage: verify upstream checksums, compute, commit artifacts."""
    if name not in _STAGE_FUNCS:
        raise StageError(name, f"unknown stage; expected one of {STAGES}")
    store = ArtifactStore(cfg.out_dir)
    inputs = store.require_upstream(name, cfg)
    started = time.monotonic()
    tmp = store.outdir / f".tmp-{name}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        result = _STAGE_FUNCS[name](cfg, store, tmp)
        outputs = store.commit(name, cfg, tmp, inputs, started)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, str(exc)) from exc
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    log.info("stage %s: wrote %s (%.2fs)", name, ", ".join(sorted(outputs)),
             time.monotonic() - started)
    return result


def run_all(cfg):
    """Run every stage in order; prints the final report row."""
    result = None
    for name in STAGES:
        out = run_stage(name, cfg)
        if name == "evaluate":
            result = out
    print(reporting.format_table_row(result, setting=cfg.setting))
    return result

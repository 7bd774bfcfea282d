"""Corpus embedding with a content-addressed cache, and the two benchmark pipelines."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .. import __version__
from ..dsp import read_signal
from ..encoder import EchoEncoder, encode_signal
from ..errors import ConfigError, DataIOError, EchoError, InvalidInputError
from ..evaluation import (
    REPORT_SCHEMA_VERSION,
    EmbeddingSet,
    aggregate_scores,
    classification_metrics,
    kfold_splits,
    knn_anomaly_scores,
    knn_classify,
    loocv_splits,
    partial_auc,
    roc_auc,
)
from .manifest import DatasetManifest

log = logging.getLogger(__name__)

EMBEDDING_FORMAT = "echoenc-embeddings"
EMBEDDING_VERSION = 1


@dataclass(frozen=True)
class EvalConfig:
    k: int = 1
    metric: str = "euclidean"
    l2_normalize: bool = True
    max_fpr: float = 0.1
    aggregate: str = "arithmetic"
    cv: str = "loocv"
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.metric not in ("euclidean", "cosine"):
            raise ConfigError(f"metric must be 'euclidean' or 'cosine', got {self.metric!r}")
        if self.cv not in ("loocv", "kfold"):
            raise ConfigError(f"cv must be 'loocv' or 'kfold', got {self.cv!r}")
        if not 0 < self.max_fpr <= 1:
            raise ConfigError(f"max_fpr must lie in (0, 1], got {self.max_fpr}")
        if self.aggregate not in ("arithmetic", "harmonic"):
            raise ConfigError(f"aggregate must be 'arithmetic' or 'harmonic', got {self.aggregate!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"unknown eval config keys: {unknown}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# embedding cache
# --------------------------------------------------------------------------


class EmbeddingCache:
    """Float32 vectors keyed by sha256(params checksum, model config, file bytes)."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(params_checksum: str, config: dict, file_bytes: bytes) -> str:
        h = hashlib.sha256()
        h.update(params_checksum.encode())
        h.update(json.dumps(config, sort_keys=True).encode())
        h.update(hashlib.sha256(file_bytes).digest())
        return h.hexdigest()

    def _paths(self, key):
        return self.root / f"{key}.f32", self.root / f"{key}.json"

    def get(self, key):
        blob_p, meta_p = self._paths(key)
        try:
            meta = json.loads(meta_p.read_text())
            raw = blob_p.read_bytes()
        except (OSError, json.JSONDecodeError):
            return None
        if hashlib.sha256(raw).hexdigest() != meta.get("sha256"):
            log.warning("cache entry %s failed checksum validation; recomputing", key)
            return None
        return np.frombuffer(raw, dtype="<f4").copy(), meta

    def put(self, key, vec: np.ndarray, meta: dict):
        raw = np.ascontiguousarray(vec, dtype="<f4").tobytes()
        blob_p, meta_p = self._paths(key)
        blob_p.write_bytes(raw)
        meta_p.write_text(json.dumps(dict(meta, sha256=hashlib.sha256(raw).hexdigest()), sort_keys=True))


def _embed_one(path: Path, encoder: EchoEncoder, cache, checksum, cfg_dict, fs_hint):
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    key = EmbeddingCache.key(checksum, cfg_dict, data) if cache else None
    if cache:
        hit = cache.get(key)
        if hit is not None:
            vec, meta = hit
            return vec, meta, True
    w = read_signal(path, fs_hint)
    try:
        emb = encode_signal(w, encoder.params, encoder.config)
    except InvalidInputError as exc:
        raise DataIOError(f"{path}: cannot embed signal ({exc})") from exc
    vec = emb.values.astype("<f4")
    meta = {"fs": emb.sample_rate_hz, "K": emb.K, "d": emb.d, "duration_s": emb.duration_s}
    if cache:
        cache.put(key, vec, meta)
    return vec, meta, False


def embed_corpus(manifest: DatasetManifest, encoder: EchoEncoder, cache_path=None, entries=None,
                 threads: int = 1) -> EmbeddingSet:
    """One float32 embedding per file, in manifest order.

    ``meta`` of the result carries per-file fs/K/d and the cache hit counts.
    """
    entries = manifest.files if entries is None else entries
    cache = EmbeddingCache(cache_path) if cache_path else None
    checksum = encoder.params.checksum()
    cfg_dict = encoder.config.to_dict()

    def job(entry):
        try:
            return _embed_one(manifest.resolve(entry), encoder, cache, checksum, cfg_dict, manifest.sample_rate_hz)
        except EchoError as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, entries))
    else:
        results = [job(e) for e in entries]
    failures = [(e.path, r) for e, r in zip(entries, results) if isinstance(r, Exception)]
    if failures:
        lines = "\n".join(f"  {p}: {exc}" for p, exc in failures)
        raise DataIOError(f"{len(failures)} file(s) could not be embedded:\n{lines}")
    rates = sorted({r[1]["fs"] for r in results})
    if manifest.task == "anomaly" and len(rates) > 1:
        raise ConfigError(f"anomaly corpus mixes sampling rates {rates}; embedding dimensions would differ")
    per_file = [dict(r[1], id=e.path) for e, r in zip(entries, results)]
    dims = {r[0].size for r in results}
    if len(dims) > 1:
        raise ConfigError(f"embedding dimensions differ across files: {sorted(dims)}; group files by sampling rate")
    vectors = np.stack([r[0] for r in results]) if results else np.zeros((0, 0), dtype="<f4")
    cached = sum(1 for r in results if r[2])
    return EmbeddingSet(
        [e.path for e in entries],
        vectors,
        [e.label for e in entries],
        {"files": per_file, "cached": cached, "computed": len(results) - cached},
    )


# --------------------------------------------------------------------------
# embedding files
# --------------------------------------------------------------------------


def write_embeddings(path, emb: EmbeddingSet, manifest: DatasetManifest | None = None, extra: dict | None = None):
    """JSON-lines header + one row per vector; vectors in a sibling ``.f32`` blob."""
    path = Path(path)
    blob = path.with_suffix(".f32")
    vecs = np.ascontiguousarray(emb.vectors, dtype="<f4")
    entries = {e.path: e for e in manifest.files} if manifest else {}
    header = {
        "format": EMBEDDING_FORMAT,
        "version": EMBEDDING_VERSION,
        "tool_version": __version__,
        "count": len(emb),
        "dim": emb.dim if len(emb) else 0,
        "dtype": "<f4",
        "blob": blob.name,
        **(extra or {}),
    }
    files = emb.meta.get("files", [{}] * len(emb))
    try:
        blob.write_bytes(vecs.tobytes())
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for i, (id_, info) in enumerate(zip(emb.ids, files)):
                e = entries.get(id_)
                row = {
                    "id": id_,
                    "path": id_,
                    "fs": info.get("fs"),
                    "K": info.get("K"),
                    "d": info.get("d"),
                    "offset": i * vecs.shape[1] * 4,
                    "label": emb.labels[i] if emb.labels else None,
                    "split": e.split if e else None,
                    "group": e.group if e else None,
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write embeddings to {path}: {exc}") from exc
    return path


def read_embeddings(path) -> EmbeddingSet:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        if header.get("format") != EMBEDDING_FORMAT:
            raise DataIOError(f"{path}: not an embedding file")
        rows = [json.loads(l) for l in lines[1:] if l.strip()]
        raw = (path.parent / header["blob"]).read_bytes()
    except (OSError, IndexError, json.JSONDecodeError) as exc:
        raise DataIOError(f"cannot read embeddings {path}: {exc}") from exc
    n, dim = header["count"], header["dim"]
    if len(raw) != n * dim * 4:
        raise DataIOError(f"{path}: blob holds {len(raw)} bytes, expected {n * dim * 4}")
    vecs = np.frombuffer(raw, dtype="<f4").reshape(n, dim).copy()
    return EmbeddingSet([r["id"] for r in rows], vecs, [r["label"] for r in rows], {"rows": rows, "header": header})


# --------------------------------------------------------------------------
# benchmarks
# --------------------------------------------------------------------------


def _report_header(task, encoder: EchoEncoder, eval_cfg: EvalConfig):
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "task": task,
        "tool_version": __version__,
        "config": {
            "eval": eval_cfg.to_dict(),
            "model": encoder.config.to_dict(),
            "params_sha256": encoder.params.checksum(),
        },
    }


def score_anomaly_groups(manifest: DatasetManifest, emb: EmbeddingSet, eval_cfg: EvalConfig) -> dict:
    """Per-group AUC/pAUC from precomputed embeddings (rows aligned with manifest.files)."""
    index = {e.path: i for i, e in enumerate(manifest.files)}
    rows, scores_out = [], []
    for group in manifest.groups():
        train = [index[e.path] for e in manifest.select("train", group)]
        test = manifest.select("test", group)
        if not train or not test:
            raise ConfigError(f"machine group {group!r} needs both train and test files")
        X = emb.vectors[train].astype(np.float64)
        Q = emb.vectors[[index[e.path] for e in test]].astype(np.float64)
        k = min(eval_cfg.k, X.shape[0])
        if eval_cfg.k > X.shape[0]:
            raise ConfigError(f"k={eval_cfg.k} exceeds the {X.shape[0]} training files of group {group!r}")
        s = knn_anomaly_scores(X, Q, k, eval_cfg.metric, eval_cfg.l2_normalize)
        labels = np.array([e.label == "anomaly" for e in test])
        if labels.all() or not labels.any():
            raise ConfigError(f"machine group {group!r} needs both normal and anomalous test files")
        auc = roc_auc(s[~labels], s[labels])
        pauc = partial_auc(s[~labels], s[labels], eval_cfg.max_fpr)
        rows.append({
            "group": group,
            "auc": auc,
            "pauc": pauc,
            "n_train": len(train),
            "n_test_normal": int((~labels).sum()),
            "n_test_anomaly": int(labels.sum()),
        })
        scores_out += [{"id": e.path, "group": group, "label": e.label, "score": float(v)} for e, v in zip(test, s)]
    return {"per_group": rows, "aggregate": aggregate_scores(rows, eval_cfg.aggregate), "scores": scores_out}


def run_anomaly_benchmark(manifest: DatasetManifest, encoder: EchoEncoder, eval_cfg: EvalConfig | None = None,
                          cache_path=None, threads: int = 1) -> dict:
    eval_cfg = eval_cfg or EvalConfig()
    if manifest.task != "anomaly":
        raise ConfigError(f"anomaly benchmark needs an anomaly manifest, got task {manifest.task!r}")
    emb = embed_corpus(manifest, encoder, cache_path, threads=threads)
    report = _report_header("anomaly", encoder, eval_cfg)
    report.update(score_anomaly_groups(manifest, emb, eval_cfg))
    return report


def classify_embeddings(emb: EmbeddingSet, eval_cfg: EvalConfig, classes=None) -> dict:
    """Cross-validated KNN classification of one embedding set (single dimension)."""
    n = len(emb)
    classes = sorted(set(emb.labels)) if classes is None else classes
    splits = loocv_splits(n) if eval_cfg.cv == "loocv" else kfold_splits(n, eval_cfg.folds, eval_cfg.seed)
    preds, folds = [], []
    for fold, (tr, te) in enumerate(splits):
        train = emb.subset(tr)
        fold_true, fold_pred = [], []
        for i in te:
            p = knn_classify(train, emb.vectors[i].astype(np.float64), eval_cfg.k, eval_cfg.metric,
                             eval_cfg.l2_normalize)
            preds.append({"id": emb.ids[i], "true": emb.labels[i], "pred": p, "fold": fold})
            fold_true.append(emb.labels[i])
            fold_pred.append(p)
        if eval_cfg.cv == "kfold":
            m = classification_metrics(fold_true, fold_pred, classes)
            folds.append({"fold": fold, "n": len(te), **{k: v for k, v in m.items() if k != "per_class"}})
    preds.sort(key=lambda r: r["id"])
    return {"predictions": preds, "folds": folds}


def run_classification_benchmark(manifest: DatasetManifest, encoder: EchoEncoder,
                                 eval_cfg: EvalConfig | None = None, cache_path=None, threads: int = 1) -> dict:
    """Embed every file once, then run the configured CV protocol.

    Files at different sampling rates have different embedding lengths, so
    CV runs separately inside each rate group; predictions are pooled.
    """
    eval_cfg = eval_cfg or EvalConfig()
    if manifest.task != "classification":
        raise ConfigError(f"classification benchmark needs a classification manifest, got {manifest.task!r}")
    classes = sorted({e.label for e in manifest.files})
    by_dim = {}
    # embed per file first so mixed rates are allowed here
    embs = []
    for e in manifest.files:
        one = embed_corpus(manifest, encoder, cache_path, entries=[e], threads=1)
        embs.append(one)
        by_dim.setdefault(one.dim, []).append(len(embs) - 1)
    report = _report_header("classification", encoder, eval_cfg)
    preds, groups = [], []
    for dim in sorted(by_dim):
        idx = by_dim[dim]
        sub = EmbeddingSet([embs[i].ids[0] for i in idx], np.concatenate([embs[i].vectors for i in idx]),
                           [embs[i].labels[0] for i in idx])
        res = classify_embeddings(sub, eval_cfg, classes)
        groups.append({"embedding_dim": dim, "n": len(idx), "folds": res["folds"]})
        preds += res["predictions"]
    preds.sort(key=lambda r: r["id"])
    pooled = classification_metrics([p["true"] for p in preds], [p["pred"] for p in preds], classes)
    report.update({"classes": classes, "groups": groups, "pooled": pooled, "predictions": preds})
    return report


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def anomaly_csv_rows(report: dict) -> str:
    lines = ["group,auc,pauc,n_train,n_test_normal,n_test_anomaly"]
    for r in report["per_group"]:
        lines.append(f"{r['group']},{r['auc']:.6f},{r['pauc']:.6f},{r['n_train']},{r['n_test_normal']},"
                     f"{r['n_test_anomaly']}")
    return "\n".join(lines) + "\n"

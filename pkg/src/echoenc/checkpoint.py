"""Checkpoint files: a JSON manifest next to a raw little-endian blob.

``save_checkpoint("run/final.json", ...)`` writes the manifest there and the
tensor bytes to ``run/final.bin``. The manifest lists every tensor with its
shape, dtype and byte offset, plus free-form metadata (configs, step, RNG
state) under ``meta``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from . import __version__
from .encoder import EchoConfig, EchoEncoder, param_shapes
from .errors import (
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    DataIOError,
)
from .nn.params import ParamStore

log = logging.getLogger(__name__)

FORMAT_TAG = "echoenc-checkpoint"
FORMAT_VERSION = 1
_DTYPE = "<f8"


def blob_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=_DTYPE)
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": _DTYPE, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "tool_version": __version__,
        "blob": blob_path(path).name,
        "blob_bytes": len(blob),
        "blob_sha256": hashlib.sha256(blob).hexdigest(),
        "tensors": entries,
        "meta": meta or {},
    }
    bpath = blob_path(path)
    try:
        tmp = bpath.with_suffix(".bin.tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, bpath)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
        os.replace(tmp, path)
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path, expected_shapes: dict | None = None):
    """Return ``(tensors, meta)``; validates version, sizes and shapes."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest {path}: {exc}") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path} is not an echoenc checkpoint")
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {manifest.get('version')} unsupported (expected {FORMAT_VERSION})"
        )
    bpath = path.parent / manifest["blob"]
    try:
        blob = bpath.read_bytes()
    except OSError as exc:
        raise CheckpointTruncatedError(f"checkpoint blob {bpath} missing: {exc}") from exc
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointTruncatedError(f"{bpath}: expected {manifest['blob_bytes']} bytes, found {len(blob)}")
    if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
        raise CheckpointError(f"{bpath}: blob checksum mismatch")
    tensors = {}
    for e in manifest["tensors"]:
        shape = tuple(e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if e["dtype"] != _DTYPE or e["nbytes"] != count * 8:
            raise CheckpointShapeError(f"{path}: tensor {e['name']} has shape {shape} but {e['nbytes']} bytes")
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise CheckpointTruncatedError(f"{path}: tensor {e['name']} extends past end of blob")
        tensors[e["name"]] = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=e["offset"]).reshape(shape).copy()
    if expected_shapes is not None:
        _check_shapes(path, tensors, expected_shapes)
    return tensors, manifest["meta"]


def _check_shapes(path, tensors, expected):
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise CheckpointShapeError(f"{path}: missing tensors {missing[:5]}")
    for name, shape in expected.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise CheckpointShapeError(f"{path}: tensor {name} has shape {tensors[name].shape}, expected {tuple(shape)}")


def prefixed(store: ParamStore, prefix: str) -> dict:
    return {f"{prefix}{n}": a for n, a in store.arrays().items()}


def strip_prefix(tensors: dict, prefix: str) -> dict:
    return {n[len(prefix):]: a for n, a in tensors.items() if n.startswith(prefix)}


def save_encoder(path, encoder: EchoEncoder, meta: dict | None = None) -> Path:
    m = dict(meta or {})
    m["model"] = encoder.config.to_dict()
    return save_checkpoint(path, prefixed(encoder.params, "student/"), m)


def load_encoder(path, config_overrides: dict | None = None) -> EchoEncoder:
    """Load the student encoder from an encoder or training checkpoint.

    The model config stored in the manifest wins over ``config_overrides``;
    conflicting overrides are logged and ignored.
    """
    tensors, meta = load_checkpoint(path)
    if "model" not in meta:
        raise CheckpointError(f"{path}: manifest has no model config")
    cfg = EchoConfig.from_dict(meta["model"])
    for key, value in (config_overrides or {}).items():
        stored = getattr(cfg, key, None)
        if stored != value:
            log.warning("%s=%r requested but checkpoint %s was built with %r; using the checkpoint value",
                        key, value, path, stored)
    params = strip_prefix(tensors, "student/") or tensors
    _check_shapes(path, params, param_shapes(cfg))
    extra = sorted(set(params) - set(param_shapes(cfg)))
    if extra:
        raise CheckpointShapeError(f"{path}: unexpected tensors {extra[:5]}")
    return EchoEncoder(cfg, ParamStore(params))

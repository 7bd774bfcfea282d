"""Dataset manifests and directory-convention scanning.

Anomaly corpora follow ``<root>/<machine>/{train,test}/{normal,anomaly}/*.wav``;
classification corpora follow ``<root>/<class>/*.{wav,csv}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError, DataIOError

MANIFEST_FORMAT = "echoenc-manifest"
MANIFEST_VERSION = 1
TASKS = ("anomaly", "classification")
SIGNAL_SUFFIXES = (".wav", ".csv")


@dataclass(frozen=True)
class FileEntry:
    path: str  # relative to the manifest root, POSIX separators
    split: str
    label: str
    group: str = ""

    def to_dict(self):
        return {"path": self.path, "split": self.split, "label": self.label, "group": self.group}


@dataclass
class DatasetManifest:
    root: Path
    task: str
    files: list
    sample_rate_hz: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for f in self.files:
            if f.split not in ("train", "test"):
                raise ConfigError(f"{f.path}: split must be 'train' or 'test', got {f.split!r}")
            if self.task == "anomaly":
                if f.label not in ("normal", "anomaly"):
                    raise ConfigError(f"{f.path}: anomaly label must be 'normal' or 'anomaly', got {f.label!r}")
                if f.split == "train" and f.label != "normal":
                    raise ConfigError(f"{f.path}: anomaly training split may only contain normal files")

    def resolve(self, entry: FileEntry) -> Path:
        return self.root / entry.path

    def select(self, split=None, group=None) -> list:
        return [f for f in self.files if (split is None or f.split == split) and (group is None or f.group == group)]

    def groups(self) -> list:
        return sorted({f.group for f in self.files})

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "task": self.task,
            "root": ".",
            "sample_rate_hz": self.sample_rate_hz,
            "files": [f.to_dict() for f in self.files],
            **({"extra": self.extra} if self.extra else {}),
        }


def save_manifest(manifest: DatasetManifest, path) -> Path:
    """Write the manifest; file paths are stored relative to its directory."""
    path = Path(path)
    if path.parent.resolve() != manifest.root.resolve():
        raise ConfigError("manifest must be saved in its root directory")
    try:
        path.write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True))
    except OSError as exc:
        raise DataIOError(f"cannot write manifest {path}: {exc}") from exc
    return path


def load_manifest(path) -> DatasetManifest:
    """Load a manifest JSON, or scan a directory that follows the layout conventions."""
    path = Path(path)
    if path.is_dir():
        if (path / "manifest.json").is_file():
            return load_manifest(path / "manifest.json")
        return scan_directory(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise ConfigError(f"{path}: not an echoenc manifest (format={doc.get('format')!r})")
    if doc.get("version") != MANIFEST_VERSION:
        raise ConfigError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    allowed = {"format", "version", "task", "root", "sample_rate_hz", "files", "extra"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown manifest keys {unknown}")
    files = []
    for i, f in enumerate(doc.get("files", [])):
        bad = sorted(set(f) - {"path", "split", "label", "group"})
        if bad:
            raise ConfigError(f"{path}: files[{i}] has unknown keys {bad}")
        files.append(FileEntry(f["path"], f.get("split", "test"), f.get("label", ""), f.get("group", "")))
    root = (path.parent / doc.get("root", ".")).resolve()
    return DatasetManifest(root, doc["task"], files, doc.get("sample_rate_hz"), doc.get("extra", {}))


def _signals(d: Path):
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in SIGNAL_SUFFIXES)


def scan_directory(root) -> DatasetManifest:
    root = Path(root).resolve()
    if not root.is_dir():
        raise DataIOError(f"{root} is not a directory")
    files = []
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    anomaly_layout = any((d / "train").is_dir() or (d / "test").is_dir() for d in subdirs)
    if anomaly_layout:
        for mdir in subdirs:
            for split in ("train", "test"):
                for label in ("normal", "anomaly"):
                    d = mdir / split / label
                    if d.is_dir():
                        for p in _signals(d):
                            files.append(FileEntry(p.relative_to(root).as_posix(), split, label, mdir.name))
        task = "anomaly"
    else:
        for cdir in subdirs:
            for p in _signals(cdir):
                files.append(FileEntry(p.relative_to(root).as_posix(), "test", cdir.name, cdir.name))
        task = "classification"
    if not files:
        raise DataIOError(f"no .wav/.csv files found under {root}")
    return DatasetManifest(root, task, files)

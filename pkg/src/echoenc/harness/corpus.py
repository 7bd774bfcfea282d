"""Write seeded synthetic corpora to disk with a manifest."""

from __future__ import annotations

from pathlib import Path

from ..dsp import write_wav
from ..errors import ConfigError, DataIOError
from .manifest import DatasetManifest, FileEntry, save_manifest
from .synth import ANOMALY_KINDS, SynthSpec, derive_seed, generate_signal

_TOP_KEYS = {"task", "seed", "sample_rate_hz", "duration_s", "machines", "classes", "name"}
_MACHINE_KEYS = {"synth", "train_normal", "test_normal", "test_anomaly", "anomaly_kinds", "anomaly_strength"}
_CLASS_KEYS = {"synth", "count"}
_SYNTH_KEYS = SynthSpec.field_names() - {"seed", "sample_rate_hz", "duration_s"}


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}: unknown key")


def validate_corpus_spec(spec: dict) -> dict:
    _reject_unknown(spec, _TOP_KEYS, "spec")
    task = spec.get("task", "anomaly")
    if task == "anomaly":
        if not spec.get("machines"):
            raise ConfigError("spec.machines: anomaly corpus needs at least one machine")
        if not isinstance(spec["machines"], dict):
            raise ConfigError("spec.machines: expected a mapping of machine name -> settings")
        for name, m in spec["machines"].items():
            _reject_unknown(m, _MACHINE_KEYS, f"spec.machines.{name}")
            _reject_unknown(m.get("synth", {}), _SYNTH_KEYS, f"spec.machines.{name}.synth")
            for kind in m.get("anomaly_kinds", ["extra_harmonic"]):
                if kind not in ANOMALY_KINDS[1:]:
                    raise ConfigError(f"spec.machines.{name}.anomaly_kinds: unknown kind {kind!r}")
    elif task == "classification":
        if not spec.get("classes"):
            raise ConfigError("spec.classes: classification corpus needs at least one class")
        if not isinstance(spec["classes"], dict):
            raise ConfigError("spec.classes: expected a mapping of class name -> settings")
        for name, c in spec["classes"].items():
            _reject_unknown(c, _CLASS_KEYS, f"spec.classes.{name}")
            _reject_unknown(c.get("synth", {}), _SYNTH_KEYS | {"anomaly_kind", "anomaly_strength"},
                            f"spec.classes.{name}.synth")
    else:
        raise ConfigError(f"spec.task: must be 'anomaly' or 'classification', got {task!r}")
    return spec


def _synth(spec: dict, params: dict, seed: int, **extra) -> SynthSpec:
    kw = dict(params)
    kw.update(extra)
    try:
        return SynthSpec(
            sample_rate_hz=int(spec.get("sample_rate_hz", 16000)),
            duration_s=float(spec.get("duration_s", 1.0)),
            seed=seed,
            **kw,
        )
    except TypeError as exc:
        raise ConfigError(f"invalid synth parameters: {exc}") from exc


def _write(out_dir: Path, rel: str, w):
    p = out_dir / rel
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create {p.parent}: {exc}") from exc
    write_wav(p, w)


def generate_corpus(spec: dict, out_dir, seed: int | None = None) -> DatasetManifest:
    """Render every signal of a corpus spec to WAV and write ``manifest.json``."""
    spec = validate_corpus_spec(spec)
    seed = int(spec.get("seed", 0) if seed is None else seed)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create output directory {out_dir}: {exc}") from exc
    task = spec.get("task", "anomaly")
    files = []
    if task == "anomaly":
        for name in sorted(spec["machines"]):
            m = spec["machines"][name]
            synth = m.get("synth", {})
            kinds = m.get("anomaly_kinds", ["extra_harmonic"])
            strength = float(m.get("anomaly_strength", 0.5))
            plan = [("train", "normal", i) for i in range(int(m.get("train_normal", 20)))]
            plan += [("test", "normal", i) for i in range(int(m.get("test_normal", 10)))]
            plan += [("test", "anomaly", i) for i in range(int(m.get("test_anomaly", 10)))]
            for split, label, i in plan:
                s = derive_seed(seed, name, split, label, i)
                if label == "anomaly":
                    kind = kinds[i % len(kinds)]
                    w = generate_signal(_synth(spec, synth, s, anomaly_kind=kind, anomaly_strength=strength))
                    rel = f"{name}/{split}/{label}/{name}_{split}_{label}_{i:04d}_{kind}.wav"
                else:
                    w = generate_signal(_synth(spec, synth, s))
                    rel = f"{name}/{split}/{label}/{name}_{split}_{label}_{i:04d}.wav"
                _write(out_dir, rel, w)
                files.append(FileEntry(rel, split, label, name))
    else:
        for name in sorted(spec["classes"]):
            c = spec["classes"][name]
            for i in range(int(c.get("count", 10))):
                w = generate_signal(_synth(spec, c.get("synth", {}), derive_seed(seed, name, i)))
                rel = f"{name}/{name}_{i:04d}.wav"
                _write(out_dir, rel, w)
                files.append(FileEntry(rel, "test", name, name))
    manifest = DatasetManifest(out_dir.resolve(), task, files, int(spec.get("sample_rate_hz", 16000)),
                               {"generator_seed": seed, "spec": spec})
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest

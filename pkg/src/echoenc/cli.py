"""``echoenc`` command-line entry point.

Exit codes: 0 success, 2 configuration/validation, 3 I/O, 4 numeric failure,
5 self-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bandsplit import split_bands
from .checkpoint import load_encoder, save_encoder
from .config import load_config, load_document
from .dsp import Waveform, stft_magnitude
from .encoder import EchoEncoder, init_params
from .errors import CheckpointError, ConfigError, DataIOError, EchoError, InvalidInputError, NumericError, UsageError
from .harness.corpus import generate_corpus
from .harness.manifest import load_manifest
from .harness.pipeline import (
    anomaly_csv_rows,
    embed_corpus,
    report_json,
    run_anomaly_benchmark,
    run_classification_benchmark,
    write_embeddings,
)
from .selfcheck import TIME_BUDGET_S, format_table, run_self_check
from .trainer import TrainState, band_samples, load_train_state, stream_rng, train

log = logging.getLogger("echoenc")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_SELFCHECK = 0, 2, 3, 4, 5


def _write_json(path: Path, doc: dict):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def _run_record(command: str, effective: dict, **extra) -> dict:
    return {"command": command, "tool_version": __version__, "config": effective, **extra}


def _resolve(args, flags=None):
    flags = dict(flags or {})
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.threads is not None:
        flags["threads"] = args.threads
    return load_config(getattr(args, "config", None), args.set or (), flags)


def _set_threads(n: int):
    # caps BLAS pools spawned after this point and numba's worker count
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = load_document(args.spec)
    manifest = generate_corpus(spec, args.out, args.seed)
    counts = {}
    for f in manifest.files:
        counts[f.group] = counts.get(f.group, 0) + 1
    print(f"wrote {len(manifest.files)} files to {args.out} ({manifest.task})")
    for g in sorted(counts):
        print(f"  {g}: {counts[g]}")
    return EXIT_OK


def _training_files(manifest):
    if manifest.task == "anomaly":
        return manifest.select("train")
    return manifest.files


def cmd_train(args) -> int:
    from .dsp import read_signal

    run = _resolve(args)
    out = Path(args.out)
    manifest = load_manifest(args.data)
    if args.resume:
        state, echo_cfg, train_cfg = load_train_state(args.resume)
        if echo_cfg != run.model or train_cfg != run.train:
            log.warning("resuming with the configuration stored in %s; command-line configuration ignored",
                        args.resume)
    else:
        echo_cfg, train_cfg = run.model, run.train
        state = TrainState.initialize(echo_cfg, train_cfg)
    samples = []
    for entry in _training_files(manifest):
        w = read_signal(manifest.resolve(entry), manifest.sample_rate_hz)
        samples += band_samples(w, echo_cfg, entry.path)
    if not samples:
        raise ConfigError(f"{args.data}: no training files")
    effective = dict(run.to_dict(), model=echo_cfg.to_dict(), train=train_cfg.to_dict())
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create {out}: {exc}") from exc
    _write_json(out / "run.json", _run_record("train", effective, data=str(args.data),
                                               resumed_from=str(args.resume) if args.resume else None))
    metrics = out / "metrics.jsonl"
    if not args.resume and metrics.exists():
        metrics.unlink()
    start = state.step

    def progress(m):
        if args.log_every and m["step"] % args.log_every == 0:
            print(f"step {m['step']:>7d}  loss {m['total']:.5f}  lr {m['lr']:.3e}  |g| {m['grad_norm']:.3f}",
                  flush=True)

    state = train(samples, echo_cfg, train_cfg, state, metrics, out, progress,
                  {"tool_version": __version__, "effective_config": effective})
    print(f"trained steps {start + 1}..{state.step} on {len(samples)} band samples; "
          f"final checkpoint {out / 'final.json'}")
    return EXIT_OK


def _encoder_from_args(args, run) -> EchoEncoder:
    if args.ckpt:
        return load_encoder(args.ckpt, run.explicit.get("model"))
    log.warning("no --ckpt given; using a randomly initialized encoder (seed %d)", run.seed)
    return EchoEncoder(run.model, init_params(run.model, stream_rng(run.seed, "init")))


def cmd_init(args) -> int:
    run = _resolve(args)
    enc = EchoEncoder(run.model, init_params(run.model, stream_rng(run.seed, "init")))
    save_encoder(args.out, enc, {"tool_version": __version__, "effective_config": run.to_dict()})
    print(f"wrote randomly initialized {run.model.variant} encoder to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    run = _resolve(args)
    enc = _encoder_from_args(args, run)
    manifest = load_manifest(args.data)
    emb = embed_corpus(manifest, enc, args.cache, threads=run.threads)
    effective = dict(run.to_dict(), model=enc.config.to_dict())
    write_embeddings(args.out, emb, manifest, {
        "config": effective,
        "params_sha256": enc.params.checksum(),
    })
    dims = {}
    for info in emb.meta["files"]:
        key = (info["fs"], info["K"], info["d"])
        dims[key] = dims.get(key, 0) + 1
    for (fs, K, d), n in sorted(dims.items()):
        print(f"{n} file(s) at {fs} Hz: K={K} bands x d={d} -> {K * d} values")
    print(f"{emb.meta['cached']} cached / {emb.meta['computed']} computed")
    return EXIT_OK


def _eval(args, task: str) -> int:
    flags = {"eval": {}}
    if args.k is not None:
        flags["eval"]["k"] = args.k
    if getattr(args, "cv", None):
        flags["eval"]["cv"], flags["eval"]["folds"] = ("loocv", 5) if args.cv == "loocv" else ("kfold", 5)
    run = _resolve(args, flags if flags["eval"] else None)
    enc = _encoder_from_args(args, run)
    manifest = load_manifest(args.data)
    if manifest.task != task:
        raise ConfigError(f"{args.data} is a {manifest.task} manifest; this command needs {task}")
    if task == "anomaly":
        report = run_anomaly_benchmark(manifest, enc, run.eval, args.cache, run.threads)
        agg = report["aggregate"]
        line = f"mean AUC {agg['mean_auc']:.4f}  mean pAUC {agg['mean_pauc']:.4f}  ({agg['mode']})"
    else:
        report = run_classification_benchmark(manifest, enc, run.eval, args.cache, run.threads)
        p = report["pooled"]
        line = f"accuracy {p['accuracy']:.4f}  macro F1 {p['macro_f1']:.4f}  ({len(report['predictions'])} predictions)"
    report["config"]["run"] = dict(run.to_dict(), model=enc.config.to_dict())
    try:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(report_json(report))
        if task == "anomaly" and args.csv:
            Path(args.csv).write_text(anomaly_csv_rows(report))
    except OSError as exc:
        raise DataIOError(f"cannot write report: {exc}") from exc
    if task == "anomaly":
        for r in report["per_group"]:
            print(f"  {r['group']:<16} AUC {r['auc']:.4f}  pAUC {r['pauc']:.4f}")
    print(line)
    return EXIT_OK


def cmd_eval_anomaly(args) -> int:
    return _eval(args, "anomaly")


def cmd_eval_classify(args) -> int:
    return _eval(args, "classification")


def cmd_self_check(args) -> int:
    perturb = {args.inject_grad_fault: 1e-2} if args.inject_grad_fault else None
    results, elapsed = run_self_check(perturb=perturb)
    print(format_table(results))
    if elapsed > TIME_BUDGET_S:
        log.warning("self-check took %.1f s, over the %.0f s budget", elapsed, TIME_BUDGET_S)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {elapsed:.1f} s")
    return EXIT_SELFCHECK if failed else EXIT_OK


def cmd_bands(args) -> int:
    """Dump the band layout (edges, center frequency, relative position) for a sampling rate."""
    run = _resolve(args)
    cfg = run.model
    if args.ckpt:
        cfg = load_encoder(args.ckpt, run.explicit.get("model")).config
    if cfg.gamma != 100.0:
        log.warning("frequency PE gamma=%g differs from the pretrained default 100; encodings are not comparable",
                    cfg.gamma)
    n_fft = cfg.stft.window_len(args.fs)
    bands = split_bands(stft_magnitude(Waveform(np.zeros(n_fft), args.fs), cfg.stft), cfg.bandsplit)
    doc = {
        "sample_rate_hz": args.fs,
        "n_fft": n_fft,
        "bin_hz": args.fs / n_fft,
        "K": len(bands),
        "discarded_bins": bands.discarded_bins,
        "bands": bands.records(),
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key, e.g. model.depth=2")
    common.add_argument("--seed", type=int, help="run seed (default 0)")
    common.add_argument("--threads", type=int, help="cap on worker threads")

    p = argparse.ArgumentParser(prog="echoenc", description="Band-split spectrogram encoder toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="render a synthetic corpus")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="self-supervised training")
    s.add_argument("--data", required=True, help="manifest JSON or corpus directory")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--resume", help="training checkpoint to continue from")
    s.add_argument("--log-every", type=int, default=100)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("init", parents=[common], help="write a randomly initialized encoder checkpoint")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("embed", parents=[common], help="embed every file of a corpus")
    s.add_argument("--ckpt")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cache", help="embedding cache directory")
    s.set_defaults(func=cmd_embed)

    for name, func, cv in (("eval-anomaly", cmd_eval_anomaly, False), ("eval-classify", cmd_eval_classify, True)):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--ckpt")
        s.add_argument("--data", required=True)
        s.add_argument("--report", required=True)
        s.add_argument("--k", type=int)
        s.add_argument("--cache")
        if cv:
            s.add_argument("--cv", choices=["loocv", "kfold5"])
        else:
            s.add_argument("--csv", help="also write per-group rows as CSV")
        s.set_defaults(func=func)

    s = sub.add_parser("self-check", help="gradient, PE and STFT verification")
    s.add_argument("--inject-grad-fault", metavar="PARAM", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_self_check)

    s = sub.add_parser("bands", parents=[common], help="print the band layout for a sampling rate")
    s.add_argument("--fs", type=int, required=True)
    s.add_argument("--ckpt")
    s.set_defaults(func=cmd_bands)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = getattr(args, "threads", None)
    if threads:
        _set_threads(threads)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for k, v in sorted(exc.diagnostics.items()):
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataIOError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, InvalidInputError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EchoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

import hashlib
import json
from pathlib import Path

import pytest

from echoenc import __version__
from echoenc.cli import main

SMOKE_SPEC = {
    "task": "anomaly",
    "sample_rate_hz": 8000,
    "duration_s": 0.5,
    "seed": 3,
    "machines": {
        "fan": {"synth": {"base_rotation_hz": 90}, "train_normal": 4, "test_normal": 2, "test_anomaly": 2,
                "anomaly_strength": 1.0},
        "pump": {"synth": {"base_rotation_hz": 40}, "train_normal": 4, "test_normal": 2, "test_anomaly": 2},
    },
}

CLASSIFY_SPEC = {
    "task": "classification",
    "sample_rate_hz": 8000,
    "duration_s": 0.5,
    "classes": {
        "healthy": {"count": 3, "synth": {"base_rotation_hz": 60}},
        "bearing": {"count": 3, "synth": {"base_rotation_hz": 60, "anomaly_kind": "impulse_train",
                                          "anomaly_strength": 1.0}},
    },
}

TINY_RUN = {
    "model": {"variant": "custom", "embed_dim": 16, "depth": 1, "heads": 2, "band_width": 16,
              "patch_len": 8, "patch_stride": 4},
    "train": {"preset": "toy", "total_steps": 10, "batch_size": 4, "warmup_steps": 2, "clip_switch_step": 5,
              "checkpoint_every": 5},
    "seed": 0,
}


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = write_json(root / "spec.json", SMOKE_SPEC)
    assert main(["gen-data", "--spec", str(spec), "--out", str(root / "data")]) == 0
    config = write_json(root / "run.json", TINY_RUN)
    assert main(["train", "--config", str(config), "--data", str(root / "data"), "--out", str(root / "ckpt"),
                 "--log-every", "0"]) == 0
    return root


def test_gen_data_deterministic(tmp_path):
    spec = write_json(tmp_path / "spec.json", SMOKE_SPEC)
    for name in ("a", "b"):
        assert main(["gen-data", "--spec", str(spec), "--out", str(tmp_path / name), "--seed", "5"]) == 0
    a, b = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    assert len(a) == 17  # 16 wavs + manifest
    # manifests carry their own absolute root, so compare the audio only
    assert {k: v for k, v in a.items() if k.endswith(".wav")} == {k: v for k, v in b.items() if k.endswith(".wav")}


def test_gen_data_malformed_spec(tmp_path, capsys):
    bad = dict(SMOKE_SPEC, machines={"fan": {"synth": {"base_rotaton_hz": 90}}})
    spec = write_json(tmp_path / "spec.json", bad)
    assert main(["gen-data", "--spec", str(spec), "--out", str(tmp_path / "out")]) == 2
    assert "spec.machines.fan.synth.base_rotaton_hz" in capsys.readouterr().err


def test_gen_data_missing_spec(tmp_path):
    assert main(["gen-data", "--spec", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "out")]) == 3


def test_train_smoke_outputs(work):
    lines = (work / "ckpt" / "metrics.jsonl").read_text().splitlines()
    assert [json.loads(line)["step"] for line in lines] == list(range(1, 11))
    assert (work / "ckpt" / "final.json").exists()
    run = json.loads((work / "ckpt" / "run.json").read_text())
    assert run["tool_version"] == __version__
    assert run["config"]["train"]["total_steps"] == 10
    meta = json.loads((work / "ckpt" / "final.json").read_text())
    assert meta["meta"]["tool_version"] == __version__


def test_train_resume_bit_identical(work, tmp_path):
    assert main(["train", "--data", str(work / "data"), "--out", str(tmp_path / "resumed"),
                 "--resume", str(work / "ckpt" / "step_0000005.json"), "--log-every", "0"]) == 0
    full, resumed = work / "ckpt", tmp_path / "resumed"
    assert (full / "final.bin").read_bytes() == (resumed / "final.bin").read_bytes()
    tail = (full / "metrics.jsonl").read_text().splitlines()[5:]
    assert (resumed / "metrics.jsonl").read_text().splitlines() == tail


def test_train_seed_gives_identical_trace(work, tmp_path):
    config = write_json(tmp_path / "run.json", TINY_RUN)
    assert main(["train", "--config", str(config), "--data", str(work / "data"), "--out", str(tmp_path / "again"),
                 "--log-every", "0"]) == 0
    assert (tmp_path / "again" / "metrics.jsonl").read_bytes() == (work / "ckpt" / "metrics.jsonl").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_non_finite_exit_4(work, tmp_path, capsys):
    config = write_json(tmp_path / "run.json", TINY_RUN)
    code = main(["train", "--config", str(config), "--set", "train.base_lr=1e300", "--data", str(work / "data"),
                 "--out", str(tmp_path / "boom"), "--log-every", "0"])
    assert code == 4
    err = capsys.readouterr().err
    assert "non-finite" in err and "step:" in err


def test_embed_and_cache(work, tmp_path, capsys):
    ckpt = str(work / "ckpt" / "final.json")
    args = ["embed", "--ckpt", ckpt, "--data", str(work / "data"), "--out", str(tmp_path / "emb.jsonl"),
            "--cache", str(tmp_path / "cache")]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert "0 cached / 16 computed" in first
    rows = (tmp_path / "emb.jsonl").read_text().splitlines()
    header = json.loads(rows[0])
    assert header["count"] == 16 and len(rows) == 17
    assert header["config"]["model"]["embed_dim"] == 16
    assert main(args) == 0
    assert "16 cached / 0 computed" in capsys.readouterr().out


def test_embed_ten_file_corpus(work, tmp_path, capsys):
    spec = dict(SMOKE_SPEC, machines={"fan": {"train_normal": 6, "test_normal": 2, "test_anomaly": 2}})
    write_json(tmp_path / "spec.json", spec)
    assert main(["gen-data", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "d")]) == 0
    args = ["embed", "--ckpt", str(work / "ckpt" / "final.json"), "--data", str(tmp_path / "d"),
            "--out", str(tmp_path / "e.jsonl"), "--cache", str(tmp_path / "c")]
    assert main(args) == 0
    assert len((tmp_path / "e.jsonl").read_text().splitlines()) == 11
    capsys.readouterr()
    assert main(args) == 0
    assert "10 cached / 0 computed" in capsys.readouterr().out


def test_embed_corrupt_wav_exit_3(work, tmp_path, capsys):
    import shutil

    data = tmp_path / "data"
    shutil.copytree(work / "data", data)
    victim = sorted(data.rglob("*.wav"))[3]
    victim.write_bytes(b"RIFF garbage")
    code = main(["embed", "--ckpt", str(work / "ckpt" / "final.json"), "--data", str(data / "manifest.json"),
                 "--out", str(tmp_path / "e.jsonl")])
    assert code == 3
    assert victim.name in capsys.readouterr().err


def test_embed_mixed_rates_exit_2(work, tmp_path, capsys):
    import shutil

    from echoenc.dsp import read_signal, write_wav, Waveform
    import numpy as np

    data = tmp_path / "data"
    shutil.copytree(work / "data", data)
    victim = sorted(data.rglob("*.wav"))[0]
    w = read_signal(victim)
    write_wav(victim, Waveform(np.repeat(w.samples, 2), 16000))
    code = main(["embed", "--ckpt", str(work / "ckpt" / "final.json"), "--data", str(data),
                 "--out", str(tmp_path / "e.jsonl")])
    assert code == 2
    assert "sampling rates" in capsys.readouterr().err


def test_eval_anomaly_report(work, tmp_path):
    report_path = tmp_path / "r.json"
    assert main(["eval-anomaly", "--ckpt", str(work / "ckpt" / "final.json"), "--data", str(work / "data"),
                 "--report", str(report_path), "--csv", str(tmp_path / "r.csv")]) == 0
    report = json.loads(report_path.read_text())
    assert report["task"] == "anomaly"
    assert report["tool_version"] == __version__
    assert [r["group"] for r in report["per_group"]] == ["fan", "pump"]
    for row in report["per_group"]:
        assert 0.0 <= row["auc"] <= 1.0 and 0.0 <= row["pauc"] <= 1.0
    assert {"mean_auc", "mean_pauc"} <= set(report["aggregate"])
    assert report["config"]["run"]["model"]["embed_dim"] == 16
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 3


def test_eval_anomaly_invalid_k(work, tmp_path):
    code = main(["eval-anomaly", "--ckpt", str(work / "ckpt" / "final.json"), "--data", str(work / "data"),
                 "--report", str(tmp_path / "r.json"), "--k", "0"])
    assert code == 2
    assert not (tmp_path / "r.json").exists()


def test_eval_classify_loocv(work, tmp_path):
    write_json(tmp_path / "spec.json", CLASSIFY_SPEC)
    assert main(["gen-data", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "d")]) == 0
    report_path = tmp_path / "r.json"
    assert main(["eval-classify", "--ckpt", str(work / "ckpt" / "final.json"), "--data", str(tmp_path / "d"),
                 "--report", str(report_path), "--cv", "loocv"]) == 0
    report = json.loads(report_path.read_text())
    assert len(report["predictions"]) == 6
    assert sorted(report["classes"]) == ["bearing", "healthy"]


def test_eval_task_mismatch(work, tmp_path, capsys):
    code = main(["eval-classify", "--ckpt", str(work / "ckpt" / "final.json"), "--data", str(work / "data"),
                 "--report", str(tmp_path / "r.json")])
    assert code == 2
    assert "anomaly manifest" in capsys.readouterr().err


def test_unknown_config_key_exit_2(work, tmp_path, capsys):
    code = main(["train", "--set", "model.widht=3", "--data", str(work / "data"), "--out", str(tmp_path / "x")])
    assert code == 2
    assert "model.widht" in capsys.readouterr().err


def test_missing_checkpoint_exit_3(work, tmp_path):
    code = main(["eval-anomaly", "--ckpt", str(tmp_path / "none.json"), "--data", str(work / "data"),
                 "--report", str(tmp_path / "r.json")])
    assert code == 3


def test_init_then_embed_matches_default_random(tmp_path, work, capsys):
    assert main(["init", "--out", str(tmp_path / "init.json"), "--set", "model.variant=toy", "--seed", "4"]) == 0
    args = ["--data", str(work / "data"), "--set", "model.variant=toy", "--seed", "4"]
    assert main(["embed", "--ckpt", str(tmp_path / "init.json"), "--out", str(tmp_path / "a.jsonl")] + args) == 0
    assert main(["embed", "--out", str(tmp_path / "b.jsonl")] + args) == 0
    assert (tmp_path / "a.f32").read_bytes() == (tmp_path / "b.f32").read_bytes()


def test_self_check_passes(capsys):
    assert main(["self-check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "grad:" in out and "pe-cross-rate" in out and "stft-oracle" in out


def test_self_check_fault_injection(capsys):
    assert main(["self-check", "--inject-grad-fault", "blocks.0.attn.qkv.weight"]) == 5
    assert "FAIL" in capsys.readouterr().out


def test_bands_dump_and_gamma_warning(capsys, caplog):
    assert main(["bands", "--fs", "32000"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["K"] == 12 and doc["n_fft"] == 800
    assert main(["bands", "--fs", "16000", "--set", "model.gamma=50"]) == 0
    assert any("gamma" in r.getMessage() for r in caplog.records)

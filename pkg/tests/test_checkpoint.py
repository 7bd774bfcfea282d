import json
import logging

import numpy as np
import pytest

from echoenc.checkpoint import load_checkpoint, load_encoder, save_checkpoint, save_encoder
from echoenc.encoder import EchoConfig, EchoEncoder, init_params
from echoenc.errors import CheckpointError, CheckpointShapeError, CheckpointTruncatedError, CheckpointVersionError


@pytest.fixture
def enc():
    cfg = EchoConfig.from_variant("custom", embed_dim=16, depth=2, heads=2)
    return EchoEncoder(cfg, init_params(cfg, 3))


def test_roundtrip_bit_exact(tmp_path, enc):
    save_encoder(tmp_path / "m.json", enc)
    back = load_encoder(tmp_path / "m.json")
    assert back.config == enc.config
    for name, t in enc.params.items():
        assert back.params[name].data.tobytes() == t.data.tobytes()


def test_version_mismatch(tmp_path, enc):
    p = save_encoder(tmp_path / "m.json", enc)
    doc = json.loads(p.read_text())
    doc["version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(CheckpointVersionError):
        load_encoder(p)


def test_shape_edit(tmp_path, enc):
    p = save_encoder(tmp_path / "m.json", enc)
    doc = json.loads(p.read_text())
    t = next(e for e in doc["tensors"] if e["name"] == "student/cls_token")
    t["shape"] = [8]
    p.write_text(json.dumps(doc))
    with pytest.raises(CheckpointShapeError):
        load_encoder(p)


def test_wrong_expected_shape(tmp_path):
    save_checkpoint(tmp_path / "c.json", {"w": np.zeros((2, 3))})
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(tmp_path / "c.json", {"w": (3, 2)})


def test_truncated_blob(tmp_path, enc):
    p = save_encoder(tmp_path / "m.json", enc)
    blob = tmp_path / "m.bin"
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(CheckpointTruncatedError):
        load_encoder(p)


def test_corrupt_blob(tmp_path, enc):
    p = save_encoder(tmp_path / "m.json", enc)
    blob = tmp_path / "m.bin"
    raw = bytearray(blob.read_bytes())
    raw[10] ^= 0xFF
    blob.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_encoder(p)


def test_manifest_config_wins(tmp_path, enc, caplog):
    p = save_encoder(tmp_path / "m.json", enc)
    with caplog.at_level(logging.WARNING):
        back = load_encoder(p, {"gamma": 50.0})
    assert back.config.gamma == 100.0
    assert "gamma" in caplog.text

import struct

import numpy as np
import pytest

from pedxing.checkpoint import (FORMAT_VERSION, MAGIC, CheckpointVersionError, load_checkpoint,
                                read_container, restore, write_container)
from pedxing.config import RunConfig
from pedxing.exceptions import CheckpointError, FingerprintMismatchError
from pedxing.heads import ModelPhi
from pedxing.training import Trainer

from test_training import _noise_dataset


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "c.xint"
    cfg = RunConfig.desk(epochs=1, batch_size=4)
    t = Trainer(cfg, _noise_dataset(4, 1))
    t.fit()
    t.save(path)
    return t, path


def test_container_round_trip(tmp_path):
    entries = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array(3.5),
               "c": np.array([1, -2], dtype=np.int64), "d": np.frombuffer(b"xyz", np.uint8)}
    write_container(tmp_path / "f", entries)
    back = read_container(tmp_path / "f")
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].dtype == entries[k].dtype and np.array_equal(back[k], entries[k])
    assert (tmp_path / "f").read_bytes()[:4] == MAGIC
    assert not (tmp_path / "f.tmp").exists()


def test_truncated_file_raises_cleanly(trained, tmp_path):
    _, path = trained
    blob = path.read_bytes()
    for cut in (3, 20, len(blob) // 2, len(blob) - 1):
        bad = tmp_path / f"cut{cut}.xint"
        bad.write_bytes(blob[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


def test_version_mismatch_is_explicit(trained, tmp_path):
    _, path = trained
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    bad = tmp_path / "v.xint"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointVersionError, match="version"):
        load_checkpoint(bad)


def test_fingerprint_guard(trained):
    t, path = trained
    other = t.config.replace(lam=0.5)
    with pytest.raises(FingerprintMismatchError):
        load_checkpoint(path, other.fingerprint())
    assert load_checkpoint(path, other.fingerprint(), force=True).epoch == 1
    # run-length and location fields do not change the fingerprint
    assert t.config.replace(epochs=99, out="/x").fingerprint() == t.config.fingerprint()


def test_restore_reproduces_parameters(trained):
    t, path = trained
    ckpt = load_checkpoint(path, t.config.fingerprint())
    fresh = ModelPhi(t.config.backbone_config(), seed=99)
    restore(ckpt, fresh)
    for (n, p), (_, q) in zip(t.model.named_parameters(), fresh.named_parameters()):
        assert p.data.tobytes() == q.data.tobytes(), n
    for (n, a), (_, b) in zip(t.model.named_buffers(), fresh.named_buffers()):
        assert a.tobytes() == b.tobytes(), n


def test_restore_into_wrong_model_fails(trained):
    _, path = trained
    other = ModelPhi(RunConfig.desk(width=0.5).backbone_config())
    with pytest.raises(CheckpointError):
        restore(load_checkpoint(path), other)

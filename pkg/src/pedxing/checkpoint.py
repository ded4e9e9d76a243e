"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    b"XINT" | u32 format version | u32 entry count
    entry*: u32 name length | name (UTF-8) | u8 dtype tag | u32 ndim
            | u64 × ndim shape | u64 payload length | payload
    u32 CRC-32 of every preceding byte

Model parameters, buffers and optimiser moments are stored as entries;
run metadata (config, fingerprint, epoch, scheduler, optimiser step count,
RNG states) is a JSON document stored as a ``uint8`` entry named ``meta``.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError, FingerprintMismatchError

MAGIC = b"XINT"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_TAGS = {v: k for k, v in _DTYPES.items()}


class CheckpointVersionError(CheckpointError):
    """The file was written by an unsupported format version."""


def write_container(path, entries):
    """Atomically write ``{name: ndarray}`` entries."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(entries)))
    for name, arr in entries.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dtype not in _TAGS:
            raise CheckpointError(f"entry {name!r}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        payload = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        buf.write(struct.pack("<I", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<BI", _TAGS[dtype], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    body = buf.getvalue()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    os.replace(tmp, path)


def read_container(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic or too short)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, count = struct.unpack_from("<II", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {version} is not supported by this build "
            f"(expects {FORMAT_VERSION}); re-export it with a matching version")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path} is truncated or corrupted (checksum mismatch)")

    entries = {}
    pos = 12
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            tag, ndim = struct.unpack_from("<BI", body, pos)
            pos += 5
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            (plen,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            if pos + plen > len(body) or tag not in _DTYPES:
                raise CheckpointError(f"{path}: entry {name!r} is malformed")
            arr = np.frombuffer(body[pos:pos + plen], dtype=_DTYPES[tag]).reshape(shape).copy()
            pos += plen
            entries[name] = arr
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path} is malformed: {exc}") from None
    if pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after the last entry")
    return entries


@dataclass
class Checkpoint:
    meta: dict
    params: dict
    buffers: dict
    adam_m: dict
    adam_v: dict

    @property
    def fingerprint(self):
        return self.meta["fingerprint"]

    @property
    def epoch(self):
        return self.meta["epoch"]


def save_checkpoint(path, model, optimizer, scheduler, epoch, config, rng_states):
    """Serialise everything needed to resume training bit-exactly."""
    entries = {}
    for name, p in model.named_parameters():
        entries[f"param/{name}"] = p.data
    for name, b in model.named_buffers():
        entries[f"buffer/{name}"] = b
    for name in optimizer.params:
        entries[f"adam_m/{name}"] = optimizer.m[name]
        entries[f"adam_v/{name}"] = optimizer.v[name]
    meta = {
        "format_version": FORMAT_VERSION,
        "fingerprint": config.fingerprint(),
        "config": config.to_dict(),
        "epoch": int(epoch),
        "adam": {"t": optimizer.t, "lr": optimizer.lr, "params": list(optimizer.params)},
        "scheduler": scheduler.state_dict(),
        "rng": rng_states,
    }
    entries["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    write_container(path, entries)


def load_checkpoint(path, expected_fingerprint=None, force=False):
    """Read a checkpoint; refuse on fingerprint mismatch unless ``force``."""
    entries = read_container(path)
    try:
        meta = json.loads(bytes(entries.pop("meta")).decode("utf-8"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: missing or unreadable metadata ({exc})") from None
    groups = {"param": {}, "buffer": {}, "adam_m": {}, "adam_v": {}}
    for key, arr in entries.items():
        kind, _, name = key.partition("/")
        if kind not in groups:
            raise CheckpointError(f"{path}: unknown entry {key!r}")
        groups[kind][name] = arr
    ckpt = Checkpoint(meta, groups["param"], groups["buffer"], groups["adam_m"], groups["adam_v"])
    if expected_fingerprint is not None and ckpt.fingerprint != expected_fingerprint and not force:
        raise FingerprintMismatchError(
            f"{path} was written under config fingerprint {ckpt.fingerprint[:12]}…, "
            f"current config is {expected_fingerprint[:12]}…; pass force to load anyway")
    return ckpt


def restore(ckpt: Checkpoint, model, optimizer=None, scheduler=None):
    """Load parameters/buffers (and optimiser/scheduler state) in place."""
    state = dict(ckpt.params)
    state.update(ckpt.buffers)
    try:
        model.load_state_dict(state)
    except KeyError as exc:
        raise CheckpointError(f"checkpoint does not match the model: {exc}") from None
    if optimizer is not None:
        names = ckpt.meta["adam"]["params"]
        if list(optimizer.params) != names:
            raise CheckpointError("optimizer parameter set differs from the checkpoint")
        optimizer.load_state_dict({"t": ckpt.meta["adam"]["t"], "lr": ckpt.meta["adam"]["lr"],
                                   "m": ckpt.adam_m, "v": ckpt.adam_v})
    if scheduler is not None:
        scheduler.load_state_dict(ckpt.meta["scheduler"])

"""Binary checkpoints.

Layout::

    b"DFFN1" | u32 LE header length | UTF-8 JSON header | payload

The header holds the format version, both configs, the epoch/iteration
counters and a manifest of ``{name, shape, offset}`` entries. The payload is
the concatenation of every tensor as little-endian float32, in manifest
order: parameters (``param/``) followed by Adam moments (``adam_m/``,
``adam_v/``). Offsets are relative to the start of the payload and must tile
it exactly.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dffn.network import DFFN, DffnConfig
from dffn.optim import AdamState

MAGIC = b"DFFN1"
VERSION = 1
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    code = "checkpoint"

    def __init__(self, path, msg: str):
        super().__init__(f"{path}: [{self.code}] {msg}")


class BadMagicError(CheckpointError):
    code = "bad-magic"


class VersionError(CheckpointError):
    code = "bad-version"


class PayloadSizeError(CheckpointError):
    code = "payload-size"


class ManifestError(CheckpointError):
    code = "manifest"


@dataclass
class Checkpoint:
    net: DffnConfig
    train: dict
    epoch: int
    iteration: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0

    def model(self) -> DFFN:
        model = DFFN(self.net)
        names = {n for n, _ in model.named_params()}
        stored = {k[len("param/"):] for k in self.tensors if k.startswith("param/")}
        if names != stored:
            missing, extra = sorted(names - stored), sorted(stored - names)
            raise ManifestError("<checkpoint>", f"parameters do not match the config (missing {missing[:3]}, extra {extra[:3]})")
        for name, p in model.named_params():
            arr = self.tensors["param/" + name]
            if arr.shape != p.shape:
                raise ManifestError("<checkpoint>", f"{name}: stored shape {arr.shape} != expected {p.shape}")
            p.assign(arr.copy())
        return model

    def adam(self) -> AdamState:
        st = AdamState(t=self.adam_t)
        for k, arr in self.tensors.items():
            if k.startswith("adam_m/"):
                st.m[k[7:]] = arr.copy()
            elif k.startswith("adam_v/"):
                st.v[k[7:]] = arr.copy()
        return st


def _collect(model: DFFN, adam: AdamState | None) -> list[tuple[str, np.ndarray]]:
    items = [("param/" + n, p.data) for n, p in model.named_params()]
    if adam is not None:
        names = [n for n, _ in model.named_params()]
        items += [("adam_m/" + n, adam.m[n]) for n in names]
        items += [("adam_v/" + n, adam.v[n]) for n in names]
    return items


def save_checkpoint(path, model: DFFN, adam: AdamState | None = None, train: dict | None = None,
                    epoch: int = 0, iteration: int = 0) -> Path:
    """Write atomically: a crash mid-write never clobbers an existing file."""
    path = Path(path)
    items = _collect(model, adam)
    manifest, offset = [], 0
    for name, arr in items:
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * _F32.itemsize
    header = {
        "format_version": VERSION,
        "net": model.cfg.to_dict(),
        "train": train or {},
        "epoch": int(epoch),
        "iteration": int(iteration),
        "adam_t": int(adam.t) if adam is not None else 0,
        "payload_bytes": offset,
        "manifest": manifest,
    }
    head = json.dumps(header, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for _, arr in items:
            f.write(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise BadMagicError(path, f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)
    if len(raw) < pos + 4:
        raise PayloadSizeError(path, "payload size mismatch (file truncated inside the header)")
    (hlen,) = struct.unpack("<I", raw[pos:pos + 4])
    pos += 4
    if len(raw) < pos + hlen:
        raise PayloadSizeError(path, "payload size mismatch (file truncated inside the header)")
    try:
        header = json.loads(raw[pos:pos + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(path, f"unparseable header ({exc})") from exc
    pos += hlen
    if header.get("format_version") != VERSION:
        raise VersionError(path, f"format version {header.get('format_version')} != {VERSION}")
    payload = raw[pos:]
    expected = header.get("payload_bytes")
    if not isinstance(expected, int) or len(payload) != expected:
        raise PayloadSizeError(path, f"payload size mismatch: header says {expected} bytes, file has {len(payload)}")

    tensors, cursor = {}, 0
    for entry in header["manifest"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if offset != cursor:
            raise ManifestError(path, f"{name}: offset {offset} leaves a gap or overlap (expected {cursor})")
        nbytes = int(np.prod(shape, dtype=np.int64)) * _F32.itemsize
        cursor += nbytes
        if cursor > len(payload):
            raise ManifestError(path, f"{name}: shape {list(shape)} runs past the payload end")
        tensors[name] = np.frombuffer(payload, _F32, count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32)
    if cursor != len(payload):
        raise ManifestError(path, f"manifest covers {cursor} of {len(payload)} payload bytes")
    try:
        net = DffnConfig.from_dict(header["net"])
    except (TypeError, ValueError) as exc:
        raise ManifestError(path, f"invalid network config ({exc})") from exc
    ck = Checkpoint(net, header.get("train", {}), header["epoch"], header["iteration"], tensors, header.get("adam_t", 0))
    try:
        ck.model()
    except ManifestError as exc:
        raise ManifestError(path, str(exc).split("] ", 1)[-1]) from None
    return ck

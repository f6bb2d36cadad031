import json
import struct

import numpy as np
import pytest

from dffn.checkpoint import (MAGIC, BadMagicError, ManifestError, PayloadSizeError, VersionError,
                             load_checkpoint, save_checkpoint)
from dffn.network import DffnConfig, full_forward, init_params
from dffn.optim import AdamState
from dffn.tensor import Tensor, no_grad

CFG = DffnConfig(base_channels=4, level_channels=(4, 8), blocks_per_level=(2, 1), seed=3)


@pytest.fixture
def saved(tmp_path, rng):
    model = init_params(CFG)
    adam = AdamState.zeros_like(model.named_params())
    for name, p in model.named_params():
        adam.m[name] = rng.standard_normal(p.shape).astype(np.float32)
        adam.v[name] = rng.random(p.shape).astype(np.float32)
    adam.t = 17
    path = save_checkpoint(tmp_path / "m.ckpt", model, adam, {"lr_init": 1e-3}, epoch=2, iteration=40)
    return path, model, adam


def test_bitwise_round_trip(saved):
    path, model, adam = saved
    ck = load_checkpoint(path)
    assert (ck.epoch, ck.iteration, ck.adam_t, ck.net) == (2, 40, 17, CFG)
    assert ck.train == {"lr_init": 1e-3}
    restored, st = ck.model(), ck.adam()
    for (n, p), (_, q) in zip(model.named_params(), restored.named_params()):
        assert p.data.tobytes() == q.data.tobytes()
        assert adam.m[n].tobytes() == st.m[n].tobytes()
        assert adam.v[n].tobytes() == st.v[n].tobytes()


def test_forward_identical_after_reload(saved, rng):
    path, model, _ = saved
    x = Tensor(rng.random((1, 3, 8, 8)).astype(np.float32))
    with no_grad():
        a = full_forward(x, model).o_p.data
        b = full_forward(x, load_checkpoint(path).model()).o_p.data
    assert a.tobytes() == b.tobytes()


def test_truncated_payload(saved):
    path = saved[0]
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(PayloadSizeError, match="payload size mismatch"):
        load_checkpoint(path)


def test_bad_magic(saved):
    path = saved[0]
    path.write_bytes(b"XXXXX" + path.read_bytes()[5:])
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def _rewrite_header(path, edit):
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9:9 + hlen])
    edit(header)
    head = json.dumps(header).encode()
    path.write_bytes(MAGIC + struct.pack("<I", len(head)) + head + raw[9 + hlen:])


def test_tampered_shape(saved):
    path = saved[0]

    def edit(h):
        h["manifest"][0]["shape"][0] += 1
    _rewrite_header(path, edit)
    with pytest.raises(ManifestError):
        load_checkpoint(path)


def test_swapped_shape_same_size_detected(saved):
    path = saved[0]

    def edit(h):
        entry = h["manifest"][0]
        entry["shape"] = [entry["shape"][1], entry["shape"][0]] + entry["shape"][2:]
    _rewrite_header(path, edit)
    with pytest.raises(ManifestError, match="shape"):
        load_checkpoint(path)


def test_version_mismatch(saved):
    path = saved[0]
    _rewrite_header(path, lambda h: h.update(format_version=99))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_error_codes_distinct():
    codes = {c.code for c in (BadMagicError, PayloadSizeError, ManifestError, VersionError)}
    assert len(codes) == 4

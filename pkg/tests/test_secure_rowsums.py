import numpy as np
import pytest

from xclp.bus import SERVER, MessageBus
from xclp.secure_rowsums import (
    FixedPointCodec,
    FixedPointOverflow,
    derive_pairwise_masks,
    pairwise_secrets,
    secure_row_sums,
)


def test_spec_example():
    contrib = {"c1": np.array([[1.0, 0], [0, 0]]), "c2": np.array([[0.0, 1], [2, 0]])}
    part = {"c1": np.array([0]), "c2": np.array([1])}
    res = secure_row_sums(contrib, part, MessageBus())
    assert np.allclose(res.outputs["c1"], [[1, 1]])
    assert np.allclose(res.outputs["c2"], [[2, 0]])


def test_single_client():
    z = np.array([[0.25, 3.5], [1.0, 0.0]])
    res = secure_row_sums({"a": z}, {"a": np.arange(2)}, MessageBus())
    assert np.array_equal(res.outputs["a"], z)


def test_masks_cancel():
    names = ["a", "b", "c", "d", "e"]
    seeds = pairwise_secrets(3, names)
    masks = derive_pairwise_masks(names, (4, 3), seeds)
    assert np.all(sum(masks.values()) == 0)
    two = derive_pairwise_masks(["a", "b"], (2, 2), seeds)
    assert np.array_equal(two["a"], (-two["b"].astype(np.int64)).astype(np.uint64))
    again = derive_pairwise_masks(names, (4, 3), seeds)
    assert all(np.array_equal(masks[k], again[k]) for k in names)


def test_random_fixture_accuracy(rng):
    n, C, m = 40, 4, 5
    ids = [f"c{j}" for j in range(m)]
    owner = rng.integers(0, m, size=n)
    owner[:m] = np.arange(m)
    part = {cid: np.flatnonzero(owner == j) for j, cid in enumerate(ids)}
    contrib = {cid: rng.random((n, C)) * 50 for cid in ids}
    codec = FixedPointCodec(24)
    res = secure_row_sums(contrib, part, MessageBus(), codec)
    total = sum(contrib.values())
    ring = sum(codec.encode(z) for z in contrib.values())
    for cid in ids:
        assert np.abs(res.outputs[cid] - total[part[cid]]).max() <= 1e-5
        assert np.array_equal(res.ring_outputs[cid], ring[part[cid]])


def test_upload_drop_restarts_without_client(rng):
    ids = ["a", "b", "c"]
    part = {"a": np.array([0, 1]), "b": np.array([2]), "c": np.array([3, 4])}
    contrib = {cid: rng.random((5, 2)) for cid in ids}
    res = secure_row_sums(contrib, part, MessageBus(), dropouts={"b": "upload"})
    assert res.attempts == 2 and res.participants == ["a", "c"]
    expect = contrib["a"] + contrib["c"]
    for cid in ("a", "c"):
        assert np.allclose(res.outputs[cid], expect[part[cid]], atol=1e-6)


def test_download_drop_only_affects_that_client(rng):
    ids = ["a", "b"]
    part = {"a": np.array([0]), "b": np.array([1])}
    contrib = {cid: rng.random((2, 3)) for cid in ids}
    base = secure_row_sums(contrib, part, MessageBus())
    res = secure_row_sums(contrib, part, MessageBus(), dropouts={"b": "download"})
    assert set(res.outputs) == {"a"}
    assert np.array_equal(res.outputs["a"], base.outputs["a"])


def test_overflow_detected():
    codec = FixedPointCodec(24)
    big = np.full((1, 1), codec.bound(2) * 2)
    with pytest.raises(FixedPointOverflow):
        secure_row_sums({"a": big, "b": big}, {"a": [0], "b": []}, MessageBus())


def test_server_relays_only_own_rows(rng):
    part = {"a": np.array([0, 2]), "b": np.array([1])}
    contrib = {cid: rng.random((3, 2)) for cid in part}
    bus = MessageBus(keep_payloads=True)
    secure_row_sums(contrib, part, bus)
    sent = {e.recipient: e for e in bus.transcript(SERVER).sent("rowsum_block")}
    assert set(sent) == set(part)
    for cid, rows in part.items():
        assert sent[cid].elements == rows.size * 2


def test_codec_roundtrip():
    codec = FixedPointCodec(24)
    x = np.array([[-3.25, 0.0, 1e6, 2.0**-24]])
    assert np.array_equal(codec.decode(codec.encode(x)), x)

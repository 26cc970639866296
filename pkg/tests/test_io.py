import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stran.image_ops import DegradeConfig
from stran.io import checkpoint, manifest
from stran.io.images import (
    FormatError,
    decode_ppm,
    decode_stfr,
    encode_ppm,
    encode_stfr,
    list_frames,
    read_frame,
    read_ppm,
    write_frame,
    write_ppm,
)


# ---------------------------------------------------------------------------
# PPM
# ---------------------------------------------------------------------------
@settings(max_examples=20, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 1000))
def test_ppm_bytes_round_trip(h, w, seed):
    px = np.random.default_rng(seed).integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    buf = encode_ppm(px)
    assert np.array_equal(decode_ppm(buf), px)
    assert encode_ppm(decode_ppm(buf)) == buf


def test_ppm_float_round_trip_within_quantization(tmp_path):
    img = np.random.default_rng(0).uniform(size=(3, 5, 7)).astype(np.float32)
    write_ppm(tmp_path / "a.ppm", img)
    back = read_ppm(tmp_path / "a.ppm")
    assert back.shape == img.shape and back.dtype == np.float32
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-7


def test_ppm_header_with_comments():
    px = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    buf = b"P6\n# made by hand\n2 2\n255\n" + px.tobytes()
    assert np.array_equal(decode_ppm(buf), px)


@pytest.mark.parametrize("buf,offset", [
    (b"P3\n2 2\n255\n", 0),
    (b"P6\n2 x\n255\n" + bytes(12), 5),
    (b"P6\n2 2\n65535\n" + bytes(24), 7),
    (b"P6\n0 2\n255\n", 3),
    (b"P6\n2 2\n255\n" + bytes(5), 16),
    (b"P6\n2 2", 6),
])
def test_ppm_malformed_reports_offset(buf, offset):
    with pytest.raises(FormatError) as err:
        decode_ppm(buf, "x.ppm")
    assert err.value.offset == offset
    assert f"byte offset {offset}" in str(err.value)


# ---------------------------------------------------------------------------
# STFR
# ---------------------------------------------------------------------------
def test_stfr_bit_exact_round_trip(tmp_path):
    img = np.random.default_rng(1).standard_normal((3, 6, 11)).astype(np.float32)
    img[0, 0, 0] = -0.0
    write_frame(tmp_path / "a.stfr", img)
    back = read_frame(tmp_path / "a.stfr")
    assert back.tobytes() == img.tobytes()
    raw = (tmp_path / "a.stfr").read_bytes()
    assert raw[:4] == b"STFR" and len(raw) == 16 + img.nbytes


@pytest.mark.parametrize("mutate,offset", [
    (lambda b: b"XXXX" + b[4:], 0),
    (lambda b: b[:10], 10),
    (lambda b: b[:-4], 16),
    (lambda b: b[:4] + bytes(12) + b[16:], 4),
])
def test_stfr_malformed_reports_offset(mutate, offset):
    buf = encode_stfr(np.zeros((1, 2, 2), np.float32))
    with pytest.raises(FormatError) as err:
        decode_stfr(mutate(buf))
    assert err.value.offset == offset


def test_list_frames_sorted(tmp_path):
    for name in ("frame_0002.ppm", "frame_0000.stfr", "notes.txt", "frame_0001.ppm"):
        (tmp_path / name).write_bytes(b"")
    assert [p.name for p in list_frames(tmp_path)] == ["frame_0000.stfr", "frame_0001.ppm", "frame_0002.ppm"]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    entries = {"a.weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
               "a.bias": np.zeros(4, np.float32), "meta.step": np.array(7.0, np.float32)}
    checkpoint.save(tmp_path / "c.stck", entries)
    back = checkpoint.load(tmp_path / "c.stck")
    assert list(back) == list(entries)
    for k in entries:
        assert back[k].shape == entries[k].shape
        assert back[k].tobytes() == entries[k].tobytes()


def test_checkpoint_detects_corruption(tmp_path):
    buf = bytearray(checkpoint.encode({"w": np.ones((2, 2), np.float32)}))
    buf[20] ^= 0xFF
    with pytest.raises(checkpoint.CheckpointError, match="checksum"):
        checkpoint.decode(bytes(buf))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(b"nope")


def test_checkpoint_rejects_lossy_entries():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.encode({"x": np.array([0.1], np.float64)})
    checkpoint.encode({"x": np.array([0.5, 3.0], np.float64)})


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------
def make_clip(root, clip_id, n=2):
    d = root / clip_id
    d.mkdir()
    hr, lr = [], []
    for i in range(n):
        hr.append(d / f"hr_{i}.ppm")
        lr.append(d / f"lr_{i}.stfr")
        write_frame(hr[-1], np.zeros((3, 8, 8), np.float32))
        write_frame(lr[-1], np.zeros((3, 2, 2), np.float32))
    return manifest.ClipEntry(clip_id, hr[0], hr, lr)


def test_manifest_round_trip(tmp_path):
    m = manifest.Manifest(DegradeConfig(q=0.07), [make_clip(tmp_path, "c0"), make_clip(tmp_path, "c1", 3)],
                          root=tmp_path)
    manifest.save(tmp_path / "manifest.txt", m)
    back = manifest.load(tmp_path / "manifest.txt")
    assert back.degrade == m.degrade
    assert [c.clip_id for c in back.clips] == ["c0", "c1"]
    assert back.clip("c1").lr == m.clip("c1").lr
    assert manifest.dumps(back) == manifest.dumps(m)
    with pytest.raises(KeyError):
        back.clip("c9")


def test_manifest_errors(tmp_path):
    with pytest.raises(manifest.ManifestError, match="cannot read"):
        manifest.load(tmp_path / "missing.txt")
    m = manifest.Manifest(DegradeConfig(), [make_clip(tmp_path, "c0")], root=tmp_path)
    text = manifest.dumps(m)
    (tmp_path / "bad_hash.txt").write_text(text.replace(DegradeConfig().digest(), "0" * 16))
    with pytest.raises(manifest.ManifestError, match="degrade hash"):
        manifest.load(tmp_path / "bad_hash.txt")
    (tmp_path / "c0" / "lr_1.stfr").unlink()
    (tmp_path / "m.txt").write_text(text)
    with pytest.raises(manifest.ManifestError, match="lr_1.stfr"):
        manifest.load(tmp_path / "m.txt")
    assert manifest.load(tmp_path / "m.txt", check_files=False).clips[0].clip_id == "c0"


def test_ppm_quantizes_by_rounding(tmp_path):
    img = np.random.default_rng(3).uniform(-0.1, 1.1, size=(3, 4, 6)).astype(np.float32)
    write_ppm(tmp_path / "q.ppm", img)
    want = (np.round(np.clip(img, 0, 1) * 255) / 255).astype(np.float32)
    np.testing.assert_array_equal(read_ppm(tmp_path / "q.ppm"), want)

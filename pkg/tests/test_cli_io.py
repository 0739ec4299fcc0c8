import hashlib
import json

import numpy as np
import pytest
from PIL import Image

from wbnet.cli import argmax_hits, main
from wbnet.records import RecordError, decode_record, encode_record, read_record, write_record
from wbnet.render import render_png, to_rgb


@pytest.mark.parametrize("dtype", [np.float32, np.float64, np.complex64, np.complex128])
def test_record_roundtrip_bit_exact(tmp_path, dtype):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4, 5))
    if np.issubdtype(dtype, np.complexfloating):
        a = a + 1j * rng.standard_normal(a.shape)
    a = a.astype(dtype)
    write_record(tmp_path / "a.wbn", a)
    b = read_record(tmp_path / "a.wbn")
    assert b.dtype == a.dtype and b.shape == a.shape
    assert a.tobytes() == b.tobytes()


def test_record_header_layout():
    buf = encode_record(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:4] == b"WBN1" and buf[4:8] == b"f32\0"
    assert int.from_bytes(buf[8:12], "little") == 2
    assert int.from_bytes(buf[12:20], "little") == 2 and int.from_bytes(buf[20:28], "little") == 3
    assert len(buf) == 28 + 6 * 4
    c = encode_record(np.array([1 + 2j, 3 - 4j], dtype=np.complex64))
    # real plane then imaginary plane
    assert np.array_equal(np.frombuffer(c[20:], "<f4"), [1, 3, 2, -4])
    assert decode_record(encode_record(np.zeros((0, 2)))).shape == (0, 2)
    assert decode_record(encode_record(np.float64(2.5))) == 2.5


def test_record_rejects_corruption(tmp_path):
    buf = encode_record(np.ones(10))
    with pytest.raises(RecordError, match="size mismatch"):
        decode_record(buf[:-3])
    with pytest.raises(RecordError, match="magic"):
        decode_record(b"XXXX" + buf[4:])
    with pytest.raises(RecordError):
        decode_record(buf[:4] + b"i32\0" + buf[8:])
    with pytest.raises(RecordError):
        encode_record(np.arange(3))


def test_render_png_modes(tmp_path):
    render_png(np.full((5, 7), 2.0), tmp_path / "c.png")
    img = np.asarray(Image.open(tmp_path / "c.png"))
    assert img.shape == (5, 7, 3) and img.dtype == np.uint8
    assert np.all(img == img[0, 0])
    g = np.random.default_rng(1).random((6, 6))
    assert np.array_equal(to_rgb(g), to_rgb(g, reference=g))
    half = to_rgb(0.5 * g, reference=g)
    assert not np.array_equal(half, to_rgb(0.5 * g))
    with pytest.raises(ValueError):
        to_rgb(np.array([[np.nan]]))


def test_argmax_hits():
    p = np.zeros((2, 10, 10))
    p[0, 3, 4] = 1
    p[1, 8, 8] = 1
    hits = argmax_hits(p, [[(3.4, 5.2)], [(2.0, 2.0), (5.0, 5.0)]])
    assert hits.tolist() == [True, False]


def _tree_hash(root):
    h = hashlib.sha256()
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


TINY = {
    "sim": {"L": 2, "s": 5, "frequencies": [1.25, 2.5], "n_src": 20, "n_rcv": 20, "counts": [1, 2]},
    "test_fd_order": 4,
    "model": {"r": 1, "n_cnn": 1, "n_rnn": 1, "cnn_kernel": 3},
    "train": {"val_size": 3, "checkpoint_every": 0},
}


def test_cli_pipeline_and_determinism(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    for run in ("a", "b"):
        assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / run), "--seed", "9",
                     "--ntrain", "4", "--ntest", "3", "--quiet"]) == 0  # fmt: skip
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")
    for run in ("ra", "rb"):
        assert main(["train", "--data", str(tmp_path / "a"), "--config", str(cfg), "--out", str(tmp_path / run),
                     "--epochs", "2", "--batch", "2", "--seed", "4", "--quiet"]) == 0  # fmt: skip
    ck = [_tree_hash(tmp_path / r / "checkpoint") for r in ("ra", "rb")]
    # the manifest carries wall times; compare parameter records only
    pa = sorted((tmp_path / "ra" / "checkpoint").glob("param.*"))
    assert all(p.read_bytes() == (tmp_path / "rb" / "checkpoint" / p.name).read_bytes() for p in pa)
    assert len(ck) == 2
    assert main(["infer", "--checkpoint", str(tmp_path / "ra" / "checkpoint"), "--data", str(tmp_path / "a"),
                 "--out", str(tmp_path / "inf"), "--png", "--png-count", "2"]) == 0  # fmt: skip
    summary = json.loads((tmp_path / "inf" / "metrics.json").read_text())
    assert summary["count"] == 3 and len(summary["per_sample"]) == 3
    assert (tmp_path / "inf" / "000001_pred.png").exists()
    assert main(["image-ls", "--data", str(tmp_path / "a"), "--freq", "2.5", "--out", str(tmp_path / "ls")]) == 0
    assert main(["image-ls", "--data", str(tmp_path / "a"), "--all-freqs", "--out", str(tmp_path / "ls")]) == 0
    assert len(list((tmp_path / "ls").glob("*.png"))) == 5
    capsys.readouterr()
    assert main(["param-count", "--config", str(cfg)]) == 0
    assert int(capsys.readouterr().out) > 0


def test_cli_selftest_suite(capsys):
    assert main(["selftest", "--suite", "perms"]) == 0
    assert main(["selftest", "--suite", "fft"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2

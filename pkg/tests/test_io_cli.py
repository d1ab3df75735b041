import struct

import numpy as np
import pytest

from swinnpe import cli
from swinnpe.io import (
    BitstreamFile,
    decode_ppm,
    encode_ppm,
    fnv1a64,
    load_model,
    read_ppm,
    write_ppm,
)
from swinnpe.metrics import psnr, write_rd_csv


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("models")
    for name, seed in (("a", 1), ("b", 2)):
        assert run("train", "--synthetic", 4, "--beta", 0.001, "--steps", 2, "--seed", seed, "--out", root / name) == 0
    return root


def test_fnv1a64_reference_values():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_ppm_roundtrip_and_idempotence(tmp_path, rng):
    img = rng.random((5, 7, 3))
    path = tmp_path / "x.ppm"
    write_ppm(path, img)
    once = read_ppm(path)
    assert once.shape == (5, 7, 3)
    np.testing.assert_array_equal(once, np.round(img * 255) / 255)
    write_ppm(path, once)
    assert read_ppm(path).tobytes() == once.tobytes()


def test_ppm_header_comments_and_errors():
    raster = bytes(range(12))
    img = decode_ppm(b"P6 # comment\n2 2\n# another\n255\n" + raster)
    assert img[0, 0, 1] == pytest.approx(1 / 255)
    with pytest.raises(ValueError):
        decode_ppm(b"P3\n2 2\n255\n" + raster)
    with pytest.raises(ValueError):
        decode_ppm(b"P6\n2 2\n65535\n" + raster)
    with pytest.raises(ValueError, match="truncated"):
        decode_ppm(b"P6\n2 2\n255\n" + raster[:5])
    with pytest.raises(ValueError):
        encode_ppm(np.zeros((2, 2)))


def test_container_roundtrip_and_truncation():
    f = BitstreamFile(0x1122334455667788, 64, 128, b"zz", [b"abc", b"", b"d"])
    blob = f.to_bytes()
    assert blob[:5] == b"SNPE\x01"
    assert struct.unpack("<Q", blob[5:13])[0] == 0x1122334455667788
    assert len(blob) == 4 + 1 + 8 + 8 + 4 + 2 + 1 + 3 * 4 + 4
    assert BitstreamFile.from_bytes(blob) == f
    assert f.payload_bits == 8 * 6
    expected = ["magic", "version", "config hash", "image size", "z-segment length", "z-segment", "slice count"]
    cuts = [0, 4, 5, 13, 21, 25, 27]
    for cut, what in zip(cuts, expected):
        with pytest.raises(ValueError, match=what):
            BitstreamFile.from_bytes(blob[:cut])
    with pytest.raises(ValueError, match="y-segment 0 length"):
        BitstreamFile.from_bytes(blob[:28])
    with pytest.raises(ValueError, match="y-segment 2"):
        BitstreamFile.from_bytes(blob[:-1])
    with pytest.raises(ValueError, match="trailing"):
        BitstreamFile.from_bytes(blob + b"\x00")
    with pytest.raises(ValueError, match="magic"):
        BitstreamFile.from_bytes(b"XNPE" + blob[4:])
    with pytest.raises(ValueError, match="version"):
        BitstreamFile.from_bytes(blob[:4] + b"\x02" + blob[5:])
    with pytest.raises(ValueError, match="hash"):
        BitstreamFile.from_bytes(blob, expected_hash=1)


def test_train_outputs_and_determinism(trained, tmp_path):
    for name in ("model.snpw", "model.cfg", "metrics.csv"):
        assert (trained / "a" / name).exists()
    assert run("train", "--synthetic", 4, "--beta", 0.001, "--steps", 2, "--seed", 1, "--out", tmp_path / "again") == 0
    assert (tmp_path / "again" / "metrics.csv").read_bytes() == (trained / "a" / "metrics.csv").read_bytes()
    assert (tmp_path / "again" / "model.snpw").read_bytes() == (trained / "a" / "model.snpw").read_bytes()


def test_train_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("train", "--synthetic", 4, "--out", tmp_path)
    assert exc.value.code == 2
    assert "--beta" in capsys.readouterr().err
    assert run("train", "--synthetic", 4, "--beta", 0.001, "--crop", 48, "--out", tmp_path / "x") == 1
    assert run("train", "--data-dir", tmp_path, "--beta", 0.001, "--out", tmp_path / "y") == 1


def test_encode_decode_roundtrip(trained, tmp_path, capsys, rng):
    img = rng.random((64, 64, 3))
    src, stream, out, recon = (tmp_path / n for n in ("in.ppm", "x.snpe", "out.ppm", "recon.ppm"))
    write_ppm(src, img)
    model = trained / "a" / "model.snpw"
    assert run("encode", "--model", model, "--input", src, "--out", stream, "--recon", recon) == 0
    printed = capsys.readouterr().out
    assert run("decode", "--model", model, "--input", stream, "--out", out) == 0
    assert out.read_bytes() == recon.read_bytes()

    f = BitstreamFile.from_bytes(stream.read_bytes())
    assert f"bpp {f.payload_bits / 4096:.4f}" in printed
    m, chash = load_model(model)
    comp = m.compress(read_ppm(src))
    assert f.payload_bits == comp.payload_bits
    assert f.config_hash == chash
    np.testing.assert_array_equal(read_ppm(out), np.round(comp.bundle.x_hat * 255) / 255)
    assert f"PSNR {psnr(read_ppm(src), comp.bundle.x_hat):.3f}" in printed


def test_decode_refuses_other_model(trained, tmp_path, capsys, rng):
    src, stream = tmp_path / "in.ppm", tmp_path / "x.snpe"
    write_ppm(src, rng.random((64, 64, 3)))
    assert run("encode", "--model", trained / "a" / "model.snpw", "--input", src, "--out", stream) == 0
    assert run("decode", "--model", trained / "b" / "model.snpw", "--input", stream, "--out", tmp_path / "o.ppm") == 1
    assert "config hash mismatch" in capsys.readouterr().err
    stream.write_bytes(stream.read_bytes()[:-3])
    assert run("decode", "--model", trained / "a" / "model.snpw", "--input", stream, "--out", tmp_path / "o.ppm") == 1


def test_encode_rejects_bad_geometry(trained, tmp_path, capsys, rng):
    src = tmp_path / "odd.ppm"
    write_ppm(src, rng.random((70, 64, 3)))
    assert run("encode", "--model", trained / "a" / "model.snpw", "--input", src, "--out", tmp_path / "x") == 1
    assert "multiple of 64" in capsys.readouterr().err


def test_eval_crops_and_writes_curves(trained, tmp_path, rng):
    data = tmp_path / "data"
    data.mkdir()
    write_ppm(data / "one.ppm", rng.random((70, 70, 3)))
    out = tmp_path / "curve.csv"
    assert run("eval", "--model", trained / "a" / "model.snpw", "--model", trained / "b" / "model.snpw", "--data-dir", data, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 3
    rows = (tmp_path / "curve.images.csv").read_text().splitlines()
    assert rows[0] == "model,image,height,width,bpp,psnr"
    assert all(",64,64," in r for r in rows[1:])


def test_bd_command(tmp_path, capsys):
    ref = [(0.1, 28.0), (0.2, 30.5), (0.4, 33.0), (0.8, 35.2)]
    write_rd_csv(tmp_path / "ref.csv", ref)
    write_rd_csv(tmp_path / "slow.csv", [(r * 1.1, q) for r, q in ref])
    assert run("bd", "--ref", tmp_path / "ref.csv", "--test", tmp_path / "ref.csv") == 0
    assert capsys.readouterr().out.strip() == "ΔPSNR 0.000 dB, Δrate 0.00%"
    assert run("bd", "--ref", tmp_path / "ref.csv", "--test", tmp_path / "slow.csv") == 0
    assert "Δrate 10.00%" in capsys.readouterr().out
    write_rd_csv(tmp_path / "short.csv", ref[:3])
    assert run("bd", "--ref", tmp_path / "ref.csv", "--test", tmp_path / "short.csv") == 1


def test_stats_command(capsys):
    assert run("stats") == 0
    assert "216,188" in capsys.readouterr().out
    assert run("stats", "--config", "paper", "--baseline", "--resolution", "256x256") == 0
    out = capsys.readouterr().out
    assert "25.35 M params" in out
    assert "relative-position tables: 43,128 params" in out
    assert out.count("relative-position tables") == 1

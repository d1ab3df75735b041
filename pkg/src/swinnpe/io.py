"""File formats: PPM images, model checkpoints with config sidecars, and the .snpe container."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .codec import SwinNPE
from .nn import dumps_state, loads_state
from .transforms import CodecConfig

BITSTREAM_MAGIC = b"SNPE"
BITSTREAM_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data):
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


# -- PPM ---------------------------------------------------------------------
def _ppm_tokens(blob, count):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace() and blob[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(blob[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte precedes the raster


def decode_ppm(blob):
    """Binary P6 bytes -> float array ``[H, W, 3]`` in [0, 1]."""
    tokens, pos = _ppm_tokens(blob, 4)
    if tokens[0] != b"P6":
        raise ValueError(f"not a binary PPM (magic {tokens[0]!r})")
    W, H, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"only 8-bit PPM (maxval 255) is supported, got {maxval}")
    raster = blob[pos : pos + H * W * 3]
    if len(raster) != H * W * 3:
        raise ValueError("truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(H, W, 3).astype(np.float64) / 255.0


def encode_ppm(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an [H, W, 3] image, got {img.shape}")
    H, W, _ = img.shape
    raster = np.round(255.0 * np.clip(img, 0.0, 1.0)).astype(np.uint8)
    return f"P6\n{W} {H}\n255\n".encode("ascii") + raster.tobytes()


def read_ppm(path):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def write_ppm(path, img):
    with open(path, "wb") as fh:
        fh.write(encode_ppm(img))


def list_images(directory):
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith((".ppm", ".pnm")))
    return [os.path.join(directory, n) for n in names]


# -- models ------------------------------------------------------------------
def sidecar_path(model_path):
    root, _ = os.path.splitext(model_path)
    return root + ".cfg"


def save_model(model, path, meta=None):
    """Write ``path`` (SNPW weights) and its ``.cfg`` sidecar.

    The sidecar carries the architecture, any training metadata, and an
    SHA-256 digest of the weight file, so two different models never share a
    config hash.
    """
    blob = dumps_state(model.state_dict())
    extra = dict(meta or {})
    extra["weights_sha256"] = hashlib.sha256(blob).hexdigest()
    cfg = model.cfg.replace(extra=extra)
    with open(path, "wb") as fh:
        fh.write(blob)
    with open(sidecar_path(path), "w", encoding="ascii", newline="\n") as fh:
        fh.write(cfg.to_text())


def load_config(path):
    with open(path, encoding="ascii") as fh:
        return CodecConfig.from_text(fh.read())


def load_model(path):
    """Returns ``(model, config_hash)``; the hash is over the sidecar bytes."""
    side = sidecar_path(path)
    with open(side, "rb") as fh:
        side_bytes = fh.read()
    cfg = CodecConfig.from_text(side_bytes.decode("ascii"))
    model = SwinNPE(cfg)
    with open(path, "rb") as fh:
        model.load_state_dict(loads_state(fh.read()))
    return model, fnv1a64(side_bytes)


# -- .snpe container ---------------------------------------------------------
@dataclass
class BitstreamFile:
    config_hash: int
    height: int
    width: int
    z_segment: bytes
    y_segments: list

    @property
    def payload_bits(self):
        return 8 * (len(self.z_segment) + sum(len(s) for s in self.y_segments))

    def to_bytes(self):
        if len(self.y_segments) > 255:
            raise ValueError("at most 255 slices fit the container")
        parts = [
            BITSTREAM_MAGIC,
            bytes([BITSTREAM_VERSION]),
            struct.pack("<Q", self.config_hash),
            struct.pack("<II", self.height, self.width),
            struct.pack("<I", len(self.z_segment)),
            self.z_segment,
            bytes([len(self.y_segments)]),
        ]
        for seg in self.y_segments:
            parts += [struct.pack("<I", len(seg)), seg]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob, expected_hash=None):
        """Forward-only parse; raises ``ValueError`` naming the first bad or missing part."""
        pos = 0

        def take(n, what):
            nonlocal pos
            if pos + n > len(blob):
                raise ValueError(f"truncated bitstream: missing {what}")
            out = blob[pos : pos + n]
            pos += n
            return out

        if take(4, "magic") != BITSTREAM_MAGIC:
            raise ValueError("not an SNPE bitstream (bad magic)")
        if take(1, "version")[0] != BITSTREAM_VERSION:
            raise ValueError("unsupported SNPE bitstream version")
        (chash,) = struct.unpack("<Q", take(8, "config hash"))
        if expected_hash is not None and chash != expected_hash:
            raise ValueError(f"config hash mismatch: stream {chash:016x}, model {expected_hash:016x}")
        H, W = struct.unpack("<II", take(8, "image size"))
        (zlen,) = struct.unpack("<I", take(4, "z-segment length"))
        z = take(zlen, "z-segment")
        S = take(1, "slice count")[0]
        ys = []
        for i in range(S):
            (n,) = struct.unpack("<I", take(4, f"y-segment {i} length"))
            ys.append(take(n, f"y-segment {i}"))
        if pos != len(blob):
            raise ValueError(f"{len(blob) - pos} trailing bytes after the last segment")
        return cls(chash, H, W, z, ys)

"""Pure-Python AGF1 reader/writer, for feature dumps produced outside the
extension (the extractor writes through this module).

Layout, little-endian:
    "AGF1" | version u32 | images u32 | stages u32
    per stage: name_len u16 | name utf-8 | channels u32 | spatial u32
    per image: id_len u16 | id utf-8
    payload: f32 ordered image, stage, channel, spatial
"""

import struct

import numpy as np

MAGIC = b"AGF1"
VERSION = 1


def _name(text):
    raw = text.encode("utf-8")
    if not raw or len(raw) > 0xFFFF:
        raise ValueError(f"bad name length for {text!r}")
    return struct.pack("<H", len(raw)) + raw


def encode(image_ids, stages, blocks):
    """stages: list of (name, channels, spatial).
    blocks: one array per stage of shape (images, channels, spatial)."""
    if len(blocks) != len(stages):
        raise ValueError("one block per stage")
    n = len(image_ids)
    out = [MAGIC, struct.pack("<III", VERSION, n, len(stages))]
    for name, channels, spatial in stages:
        out += [_name(name), struct.pack("<II", channels, spatial)]
    out += [_name(i) for i in image_ids]
    rows = []
    for (name, channels, spatial), block in zip(stages, blocks):
        block = np.asarray(block, dtype="<f4")
        if block.shape != (n, channels, spatial):
            raise ValueError(f"stage {name}: shape {block.shape}, "
                             f"expected {(n, channels, spatial)}")
        rows.append(block.reshape(n, -1))
    payload = np.concatenate(rows, axis=1) if rows else np.zeros((n, 0), "<f4")
    out.append(np.ascontiguousarray(payload, dtype="<f4").tobytes())
    return b"".join(out)


def write(path, image_ids, stages, blocks):
    with open(path, "wb") as f:
        f.write(encode(image_ids, stages, blocks))


def decode(data):
    """Returns (image_ids, stages, blocks) as accepted by encode()."""
    if data[:4] != MAGIC:
        raise ValueError("not an AGF1 file")
    version, n, count = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported AGF1 version {version}")
    pos = 16

    def text():
        nonlocal pos
        (length,) = struct.unpack_from("<H", data, pos)
        s = data[pos + 2:pos + 2 + length].decode("utf-8")
        pos += 2 + length
        return s

    stages = []
    for _ in range(count):
        name = text()
        channels, spatial = struct.unpack_from("<II", data, pos)
        pos += 8
        stages.append((name, channels, spatial))
    ids = [text() for _ in range(n)]
    width = sum(c * s for _, c, s in stages)
    if len(data) - pos != 4 * n * width:
        raise ValueError("payload size does not match header")
    payload = np.frombuffer(data, dtype="<f4", offset=pos).reshape(n, width)
    blocks, at = [], 0
    for _, c, s in stages:
        blocks.append(payload[:, at:at + c * s].reshape(n, c, s).copy())
        at += c * s
    return ids, stages, blocks


def read(path):
    with open(path, "rb") as f:
        return decode(f.read())

"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"PSAE"                magic
    u32                    format version
    u32                    header length in bytes
    header                 UTF-8 JSON: metadata + manifest of (name, dtype, shape)
    payload                arrays in manifest order, little-endian float32
    u32                    CRC32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PSAE"
FORMAT_VERSION = 1
_DTYPE = "<f4"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config_hash: str
    epoch: int
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)  # "m.<name>", "v.<name>"
    optimizer_step: int = 0
    seed: int = 0
    sample_index: int = 0  # per-sample RNG streams are derived from (seed, sample_index)
    tag: str = ""
    config: dict = field(default_factory=dict)

    def signature(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, tuple(a.shape)) for n, a in self.params.items()]


def to_bytes(ckpt: Checkpoint) -> bytes:
    arrays = [("param", n, a) for n, a in ckpt.params.items()]
    arrays += [("optim", n, a) for n, a in ckpt.optimizer.items()]
    header = {
        "config_hash": ckpt.config_hash,
        "epoch": ckpt.epoch,
        "optimizer_step": ckpt.optimizer_step,
        "seed": ckpt.seed,
        "sample_index": ckpt.sample_index,
        "tag": ckpt.tag,
        "config": ckpt.config,
        "entries": [{"group": g, "name": n, "dtype": _DTYPE, "shape": list(a.shape)}
                    for g, n, a in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(a, dtype=_DTYPE).tobytes() for _, _, a in arrays]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum mismatch: file is truncated or corrupt")
    version, hlen = struct.unpack("<II", body[4:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    header = json.loads(body[12:12 + hlen].decode())
    offset = 12 + hlen
    params, optim = {}, {}
    for e in header["entries"]:
        if e["dtype"] != _DTYPE:
            raise CheckpointError(f"entry {e['name']}: unsupported dtype {e['dtype']}")
        shape = tuple(e["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(body):
            raise CheckpointError(f"entry {e['name']}: payload runs past end of file")
        arr = np.frombuffer(body, dtype=_DTYPE, count=nbytes // 4, offset=offset).reshape(shape)
        (params if e["group"] == "param" else optim)[e["name"]] = arr.astype(np.float32)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{len(body) - offset} trailing bytes after payload")
    return Checkpoint(header["config_hash"], header["epoch"], params, optim,
                      header["optimizer_step"], header["seed"], header["sample_index"],
                      header["tag"], header["config"])


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def check_signature(ckpt: Checkpoint, expected: list[tuple[str, tuple[int, ...]]]) -> None:
    got = ckpt.signature()
    if got != [(n, tuple(s)) for n, s in expected]:
        diff = [f"{a} != {b}" for a, b in zip(got, expected) if a != b]
        raise CheckpointError(
            f"checkpoint parameters do not match the model architecture: "
            f"{len(got)} vs {len(expected)} tensors; " + "; ".join(diff[:3]))

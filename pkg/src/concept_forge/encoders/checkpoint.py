"""Versioned binary checkpoints.

Layout::

    MAGIC (8 bytes) | version u32 | manifest length u32 | manifest JSON
    | float32 little-endian payload | crc32 of payload u32

The manifest carries the encoder config, the vocabulary and an index of
named arrays (offset and shape in the payload). Optimizer state, when given,
is stored as extra arrays under an ``optim.`` prefix.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from .model import DualEncoder, EncoderConfig
from .vocab import Vocabulary

MAGIC = b"CFCKPT\x00\x01"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<II")
_CRC = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


def _serialize(model: DualEncoder, optim_state: Mapping[str, np.ndarray] | None, extra: dict | None,
               version: int = FORMAT_VERSION) -> bytes:
    arrays = dict(model.state_dict())
    if optim_state:
        arrays.update({f"optim.{k}": v for k, v in optim_state.items()})
    index, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
        index.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.size
    payload = b"".join(chunks)
    manifest = {"config": model.cfg.to_dict(), "vocabulary": model.vocab.to_dict(), "arrays": index,
                "extra": extra or {}}
    mbytes = json.dumps(manifest, sort_keys=True).encode()
    return MAGIC + _HEADER.pack(version, len(mbytes)) + mbytes + payload + _CRC.pack(zlib.crc32(payload))


def save_checkpoint(model: DualEncoder, path: str | Path, optim_state: Mapping[str, np.ndarray] | None = None,
                    extra: dict | None = None) -> str:
    """Write ``model`` to ``path``; returns the sha256 of the file bytes."""
    blob = _serialize(model, optim_state, extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    return hashlib.sha256(blob).hexdigest()


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse and verify a checkpoint; returns (manifest, arrays)."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + _HEADER.size:
        raise TruncatedCheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    version, mlen = _HEADER.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}")
    start = len(MAGIC) + _HEADER.size
    if len(blob) < start + mlen:
        raise TruncatedCheckpointError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(blob[start: start + mlen])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: manifest is not valid JSON") from exc
    total = sum(e["count"] for e in manifest["arrays"])
    pstart = start + mlen
    pend = pstart + 4 * total
    if len(blob) != pend + _CRC.size:
        raise TruncatedCheckpointError(f"{path}: expected {pend + _CRC.size} bytes, found {len(blob)}")
    payload = blob[pstart:pend]
    (crc,) = _CRC.unpack_from(blob, pend)
    if zlib.crc32(payload) != crc:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f4")
    arrays = {e["name"]: flat[e["offset"]: e["offset"] + e["count"]].reshape(tuple(e["shape"])).astype(np.float32)
              for e in manifest["arrays"]}
    return manifest, arrays


def load_checkpoint(path: str | Path, with_optimizer: bool = False):
    """Load a model (and optionally its optimizer state and extra metadata)."""
    manifest, arrays = read_checkpoint(path)
    cfg = EncoderConfig.from_dict(manifest["config"])
    vocab = Vocabulary.from_dict(manifest["vocabulary"])
    params = {k: v for k, v in arrays.items() if not k.startswith("optim.")}
    model = DualEncoder(cfg, vocab, params)
    if not with_optimizer:
        return model
    optim = {k[len("optim."):]: v for k, v in arrays.items() if k.startswith("optim.")}
    return model, (optim or None), manifest.get("extra", {})


def model_hash(model: DualEncoder) -> str:
    """Content hash of the parameters, config and vocabulary (no optimizer state)."""
    return hashlib.sha256(_serialize(model, None, None)).hexdigest()

"""Checkpoint container for discriminator and generator parameters.

Layout (all integers little-endian)::

    b"SDGARCKPT\\n"                      magic, 10 bytes
    uint32 header_len
    header_len bytes of UTF-8 JSON     sorted keys, no whitespace
    payload                            arrays back to back, float64 '<f8', row-major

The header lists each array's name and shape in payload order, the model
dimensions, an optional config hash and the SHA-256 of the payload. Writing
is deterministic, so save -> load -> save reproduces the file byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .discriminator import DiscriminatorParams
from .generator import GeneratorParams

MAGIC = b"SDGARCKPT\n"


class ChecksumError(ValueError):
    pass


class ShapeMismatchError(ValueError):
    pass


def config_hash(config: dict | None) -> str:
    if config is None:
        return ""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _arrays(disc: DiscriminatorParams, gen: GeneratorParams | None):
    out = [("context_emb", disc.context_emb), ("item_emb", disc.item_emb), ("item_bias", disc.item_bias)]
    if gen is not None:
        out += [("X", gen.X), ("Y", gen.Y)]
    return out


def save_checkpoint(disc: DiscriminatorParams, gen: GeneratorParams | None, path,
                    config: dict | None = None, extra: dict | None = None) -> None:
    arrays = _arrays(disc, gen)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = {
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "dims": {"N": disc.num_contexts, "M": disc.num_items, "d": disc.dim,
                 "K": gen.K if gen is not None else 0},
        "config_hash": config_hash(config),
        "config": config or {},
        "extra": extra or {},
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), default=str).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_checkpoint(path, expected_dims: dict | None = None):
    """Return ``(disc, gen_or_None, header)``.

    ``expected_dims`` (keys among N, M, d, K) is checked against the file.
    """
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC) or len(raw) < len(MAGIC) + 4:
        raise ChecksumError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack_from("<I", raw, len(MAGIC))
    start = len(MAGIC) + 4
    try:
        header = json.loads(raw[start: start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ChecksumError(f"{path}: corrupted header") from None
    payload = raw[start + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise ChecksumError(f"{path}: payload checksum mismatch")
    if expected_dims:
        for key, want in expected_dims.items():
            got = header["dims"].get(key)
            if got != want:
                raise ShapeMismatchError(f"checkpoint {key}: expected {want}, found {got}")
    arrays = {}
    off = 0
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) * 8
        arrays[name] = np.frombuffer(payload[off: off + n], dtype="<f8").reshape(shape).astype(np.float64)
        off += n
    disc = DiscriminatorParams(arrays["context_emb"], arrays["item_emb"], arrays["item_bias"])
    gen = GeneratorParams(arrays["X"], arrays["Y"]) if "X" in arrays else None
    return disc, gen, header

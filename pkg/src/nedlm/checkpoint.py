"""Binary checkpoints: a JSON manifest plus contiguous float64 payload.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON
header, then the parameter arrays as little-endian float64 in manifest
order.  The manifest records id, shape, byte offset, and length for
every parameter, the format version, the run configuration, and any
auxiliary metadata (vocabulary, alphabet, entity names).  Writes are
atomic (temp file then rename) and a save/load round trip is bitwise
lossless.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import ParseError
from .params import Parameter, make_parameter

MAGIC = b"NEDLMCK\x01"
FORMAT_VERSION = "1"


def write_bytes_atomic(path, payload: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def save_checkpoint(path, params: list[Parameter], config: dict, meta: dict | None = None) -> None:
    params = sorted(params, key=lambda p: p.id)
    entries = []
    blobs = []
    offset = 0
    for p in params:
        data = np.ascontiguousarray(p.values, dtype="<f8").tobytes()
        entries.append(
            {
                "id": p.id,
                "shape": list(p.values.shape),
                "offset": offset,
                "length": len(data),
                "trainable": p.trainable,
            }
        )
        blobs.append(data)
        offset += len(data)
    header = json.dumps(
        {
            "version": FORMAT_VERSION,
            "config": config,
            "meta": meta or {},
            "params": entries,
        },
        ensure_ascii=False,
    ).encode("utf-8")
    payload = b"".join(
        [MAGIC, len(header).to_bytes(8, "little"), header] + blobs
    )
    write_bytes_atomic(path, payload)


class Checkpoint:
    def __init__(self, params: dict[str, Parameter], config: dict, meta: dict):
        self.params = params
        self.config = config
        self.meta = meta


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (bad magic)")
    header_len = int.from_bytes(blob[8:16], "little")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: corrupt manifest: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}"
        )
    payload = blob[16 + header_len :]
    expected = 0
    params: dict[str, Parameter] = {}
    for entry in header["params"]:
        if entry["offset"] != expected:
            raise ParseError(
                f"{path}: manifest offsets do not tile the payload at {entry['id']!r}"
            )
        expected += entry["length"]
        raw = payload[entry["offset"] : entry["offset"] + entry["length"]]
        if len(raw) != entry["length"]:
            raise ParseError(f"{path}: payload truncated at {entry['id']!r}")
        values = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
        p = make_parameter(entry["id"], values, trainable=entry.get("trainable", True))
        params[p.id] = p
    if expected != len(payload):
        raise ParseError(f"{path}: {len(payload) - expected} trailing payload bytes")
    return Checkpoint(params, header.get("config", {}), header.get("meta", {}))


def restore_values(target: list[Parameter], loaded: dict[str, Parameter]) -> None:
    """Copy loaded values into freshly built parameters of the same ids."""
    for p in target:
        if p.id not in loaded:
            raise ParseError(f"checkpoint is missing parameter {p.id!r}")
        src = loaded[p.id]
        if src.values.shape != p.values.shape:
            raise ParseError(
                f"checkpoint parameter {p.id!r} has shape {src.values.shape}, "
                f"model expects {p.values.shape}"
            )
        p.values[...] = src.values
        p.trainable = src.trainable

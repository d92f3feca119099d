"""Checkpoint files: JSON header, raw little-endian tensor blob, SHA-256 trailer.

Layout::

    u64 LE header length | header JSON (UTF-8) | tensor bytes | sha256(preceding bytes)

The header carries the model config, the vocabulary manifest, their hashes
and a tensor directory of ``{name, shape, dtype, offset, nbytes}`` entries
with offsets relative to the start of the blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .errors import CorruptCheckpoint, ManifestMismatch
from .serialization import Vocabulary, manifest_bytes
from .surrogate import ModelConfig, param_shapes

FORMAT = "layerformer-checkpoint/1"
_DIGEST = 32
_NP_DTYPES = {torch.float64: "<f8", torch.float32: "<f4"}


class Checkpoint(NamedTuple):
    params: dict
    config: ModelConfig
    vocab_manifest: dict

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary.from_manifest(self.vocab_manifest)


def save_checkpoint(params: dict, cfg: ModelConfig, vocab_manifest: dict, path) -> Path:
    path = Path(path)
    directory, chunks, offset = [], [], 0
    for name, shape in param_shapes(cfg).items():
        tensor = params[name].detach().cpu()
        if tuple(tensor.shape) != shape:
            raise ValueError(f"{name}: shape {tuple(tensor.shape)} != {shape}")
        dtype = _NP_DTYPES[tensor.dtype]
        raw = np.ascontiguousarray(tensor.numpy(), dtype=dtype).tobytes()
        directory.append({"name": name, "shape": list(shape), "dtype": dtype, "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format": FORMAT,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "vocab_manifest": vocab_manifest,
        "vocab_manifest_hash": hashlib.sha256(manifest_bytes(vocab_manifest)).hexdigest(),
        "tensors": directory,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = struct.pack("<Q", len(head)) + head + b"".join(chunks)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)
    return path


def load_checkpoint(path, expected_vocab_manifest: dict | None = None) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 8 + _DIGEST:
        raise CorruptCheckpoint(f"{path}: file too short")
    body, trailer = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != trailer:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    (head_len,) = struct.unpack("<Q", body[:8])
    try:
        header = json.loads(body[8 : 8 + head_len])
        cfg = ModelConfig.from_dict(header["config"])
        manifest = header["vocab_manifest"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: bad header ({exc})") from None
    if header.get("format") != FORMAT:
        raise CorruptCheckpoint(f"{path}: unknown format {header.get('format')!r}")
    if cfg.hash() != header.get("config_hash"):
        raise ManifestMismatch(f"{path}: config hash does not match stored config")
    if hashlib.sha256(manifest_bytes(manifest)).hexdigest() != header.get("vocab_manifest_hash"):
        raise ManifestMismatch(f"{path}: vocabulary manifest hash does not match stored manifest")
    if expected_vocab_manifest is not None and manifest_bytes(manifest) != manifest_bytes(expected_vocab_manifest):
        raise ManifestMismatch(f"{path}: vocabulary differs from the expected one")

    blob = memoryview(body)[8 + head_len :]
    shapes = param_shapes(cfg)
    params = {}
    for entry in header["tensors"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if shapes.get(name) != shape:
            raise CorruptCheckpoint(f"{path}: unexpected tensor {name} {shape}")
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(blob):
            raise CorruptCheckpoint(f"{path}: tensor {name} runs past end of blob")
        arr = np.frombuffer(blob[start:stop], dtype=entry["dtype"]).reshape(shape)
        params[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    if set(params) != set(shapes):
        raise CorruptCheckpoint(f"{path}: missing tensors {sorted(set(shapes) - set(params))}")
    return Checkpoint(params, cfg, manifest)

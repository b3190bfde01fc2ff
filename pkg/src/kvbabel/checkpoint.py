"""Binary checkpoints: little-endian, hash-verified, bit-exact round trips.

Layout: magic "KVBL", u32 version, u32 config-JSON length + bytes, then per
tensor (sorted by name) a u32 name length, the UTF-8 name, u32 rank, u64
dims, and raw float64 data; the file ends with a u64 FNV-1a hash of every
preceding byte. Loading verifies the hash before anything is returned, so a
truncated or corrupted file never yields a partial checkpoint.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptCheckpointError, UnsupportedVersionError
from .hashing import fnv1a64
from .lm import LanguageModel, ModelConfig
from .tensor import Tensor

MAGIC = b"KVBL"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    version: int
    config: dict
    tensors: dict[str, np.ndarray]
    content_hash: int


def _tensor_items(tensors) -> list[tuple[str, np.ndarray]]:
    if isinstance(tensors, dict):
        items = list(tensors.items())
    else:
        items = list(tensors)
    out = []
    for name, arr in items:
        data = arr.data if isinstance(arr, Tensor) else arr
        data = np.asarray(data, dtype=np.float64)
        if not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        out.append((name, data))
    return sorted(out, key=lambda kv: kv[0])


def save_checkpoint(path: str, tensors, config: dict | None = None) -> int:
    """Write a checkpoint; returns the content hash stored in the trailer."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    cfg_bytes = json.dumps(config or {}, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(cfg_bytes))
    blob += cfg_bytes
    for name, arr in _tensor_items(tensors):
        name_b = name.encode("utf-8")
        blob += struct.pack("<I", len(name_b))
        blob += name_b
        blob += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<Q", dim)
        blob += arr.astype("<f8").tobytes()
    digest = fnv1a64(bytes(blob))
    blob += struct.pack("<Q", digest)
    with open(path, "wb") as fh:
        fh.write(blob)
    return digest


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 4 + 4 + 8:
        raise CorruptCheckpointError(f"{path}: file too short to be a checkpoint")
    if blob[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {version} not supported (expected {FORMAT_VERSION})"
        )
    body, trailer = blob[:-8], blob[-8:]
    (stored_hash,) = struct.unpack("<Q", trailer)
    if fnv1a64(body) != stored_hash:
        raise CorruptCheckpointError(f"{path}: content hash mismatch")

    offset = 8
    (cfg_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if offset + cfg_len > len(body):
        raise CorruptCheckpointError(f"{path}: config block overruns file")
    config = json.loads(body[offset : offset + cfg_len].decode("utf-8"))
    offset += cfg_len

    tensors: dict[str, np.ndarray] = {}
    try:
        while offset < len(body):
            (name_len,) = struct.unpack_from("<I", body, offset)
            offset += 4
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", body, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", body, offset) if rank else ()
            offset += 8 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = body[offset : offset + 8 * count]
            if len(raw) != 8 * count:
                raise CorruptCheckpointError(f"{path}: tensor {name} data truncated")
            offset += 8 * count
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    except (struct.error, UnicodeDecodeError) as e:
        raise CorruptCheckpointError(f"{path}: malformed tensor table: {e}") from e
    return Checkpoint(version, config, tensors, stored_hash)


def fingerprint(tensors) -> str:
    """Stable SHA-256 over names, shapes, and raw values; used to verify
    that frozen parameters never move."""
    h = hashlib.sha256()
    for name, arr in _tensor_items(tensors):
        h.update(name.encode("utf-8"))
        h.update(str(arr.shape).encode("ascii"))
        h.update(arr.tobytes())
    return h.hexdigest()


# -- model persistence ------------------------------------------------------


def save_model(path: str, model: LanguageModel, extra: dict | None = None) -> int:
    config = {
        "kind": "language_model",
        "model_config": model.config.to_dict(),
        "frozen": model.frozen,
    }
    if extra:
        config["extra"] = extra
    return save_checkpoint(path, dict(model.named_parameters()), config)


def load_model(path: str) -> LanguageModel:
    ckpt = load_checkpoint(path)
    if ckpt.config.get("kind") != "language_model":
        raise CorruptCheckpointError(f"{path}: not a language-model checkpoint")
    cfg = ModelConfig.from_dict(ckpt.config["model_config"])
    params = {
        name: Tensor(arr, requires_grad=True) for name, arr in ckpt.tensors.items()
    }
    model = LanguageModel(cfg, params)
    if ckpt.config.get("frozen"):
        model.freeze()
    return model


def copy_into_named(named_params, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    """Overwrite live parameters from checkpoint arrays, name by name."""
    for name, param in named_params:
        key = prefix + name
        if key not in tensors:
            raise CorruptCheckpointError(f"checkpoint missing tensor {key}")
        arr = tensors[key]
        if arr.shape != param.data.shape:
            raise CorruptCheckpointError(
                f"tensor {key} has shape {arr.shape}, expected {param.data.shape}"
            )
        param.data[...] = arr

"""
Checkpoint Storage
Versioned little-endian tensor files ("GTNS") plus a JSON config sidecar.

Layout:
    magic "GTNS" | u32 version | u64 parameter count
    per parameter: u32 name length | UTF-8 name | u32 rank | u32 dims... | float32 values
"""

import hashlib
import json
import logging
import os
import struct

import numpy as np

from .config import ModelConfig
from .exceptions import CheckpointError, ConfigError

logger = logging.getLogger(__name__)

MAGIC = b"GTNS"
VERSION = 1


def serialize_state(state):
    """
    Encode a name -> array mapping as checkpoint bytes

    Args:
        state (dict): Parameter arrays in a fixed (insertion) order

    Returns:
        bytes: Checkpoint payload
    """
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(state))]
    for name, array in state.items():
        encoded = name.encode("utf-8")
        values = np.ascontiguousarray(array, dtype="<f4")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", values.ndim))
        parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
        parts.append(values.tobytes())
    return b"".join(parts)


def deserialize_state(payload):
    """Inverse of serialize_state; raises CheckpointError on any malformed input"""
    try:
        if payload[:4] != MAGIC:
            raise CheckpointError("not a tensor checkpoint (bad magic)")
        version, count = struct.unpack_from("<IQ", payload, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        offset = 16
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", payload, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", payload, offset)
            offset += 4 * rank
            n_bytes = 4 * int(np.prod(dims, dtype=np.int64))
            if offset + n_bytes > len(payload):
                raise CheckpointError(f"checkpoint truncated inside '{name}'")
            state[name] = np.frombuffer(payload, dtype="<f4", count=n_bytes // 4, offset=offset).reshape(dims).astype(np.float32)
            offset += n_bytes
        if offset != len(payload):
            raise CheckpointError(f"{len(payload) - offset} trailing bytes after last parameter")
        return state
    except (struct.error, UnicodeDecodeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint: {e}") from e


def canonical_config(config):
    return json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_fingerprint(payload, config):
    """
    SHA-256 over the checkpoint bytes and the canonical model config; stored in every container

    Args:
        payload (bytes): Serialized tensors
        config (ModelConfig): Config the tensors are decoded with

    Returns:
        bytes: 32-byte digest
    """
    digest = hashlib.sha256(payload)
    digest.update(canonical_config(config))
    return digest.digest()


def sidecar_path(path):
    return f"{path}.json"


def save_checkpoint(path, state, config, extra=None):
    """
    Write a checkpoint and its config sidecar

    Args:
        path (str): Checkpoint file
        state (dict): Parameter arrays
        config (ModelConfig): Architecture, including the init seed
        extra (dict): Optional metadata (epoch, losses)

    Returns:
        bytes: Fingerprint of the written checkpoint
    """
    payload = serialize_state(state)
    with open(path, "wb") as f:
        f.write(payload)
    sidecar = {"config": config.to_dict(), **(extra or {})}
    with open(sidecar_path(path), "w") as f:
        json.dump(sidecar, f, indent=2)
    logger.info(f"💾 Saved checkpoint {path} ({len(state)} tensors, {len(payload)} bytes)")
    return checkpoint_fingerprint(payload, config)


def load_checkpoint(path):
    """
    Read a checkpoint and its sidecar

    Returns:
        tuple: (state dict, ModelConfig, fingerprint bytes, sidecar dict)
    """
    try:
        with open(path, "rb") as f:
            payload = f.read()
        with open(sidecar_path(path)) as f:
            sidecar = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    state = deserialize_state(payload)
    try:
        config = ModelConfig.from_dict(sidecar["config"])
    except (KeyError, ConfigError) as e:
        raise CheckpointError(f"bad config sidecar for {path}: {e}") from e
    logger.info(f"Loaded checkpoint {os.path.basename(path)} ({len(state)} tensors)")
    return state, config, checkpoint_fingerprint(payload, config), sidecar

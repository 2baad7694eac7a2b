"""Versioned binary checkpoints: JSON header plus raw float64 payload.

Layout: 8-byte magic, little-endian u32 header length, the UTF-8 JSON
header, then the concatenated little-endian float64 array payload. The
header records the resolved config, seeds, array shapes/offsets, and
optimizer scalars, so a checkpoint is self-describing.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .model import ToyHead
from .optim import AdamWState

MAGIC = b"STADKIT\x01"
FORMAT_VERSION = 1


def save_checkpoint(path, config, head, opt_state, seed, extra=None):
    arrays = [
        ("weight", head.weight),
        ("bias", head.bias),
        ("m_weight", opt_state.m[0]),
        ("m_bias", opt_state.m[1]),
        ("v_weight", opt_state.v[0]),
        ("v_bias", opt_state.v[1]),
    ]
    entries = []
    offset = 0
    chunks = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "seed": int(seed),
        "optimizer": {"step": int(opt_state.step)},
        "arrays": entries,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)
    return path


def load_checkpoint(path):
    """Read a checkpoint back as (config, head, opt_state, header)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 4 or not blob.startswith(MAGIC):
        raise ConfigError(f"{path} is not a checkpoint (bad magic)")
    header_len = struct.unpack_from("<I", blob, len(MAGIC))[0]
    start = len(MAGIC) + 4
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: corrupt checkpoint header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"{path}: unsupported checkpoint version {header.get('format_version')}"
        )
    payload = blob[start + header_len :]

    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        begin = entry["offset"]
        end = begin + count * 8
        if end > len(payload):
            raise ConfigError(f"{path}: truncated checkpoint payload")
        arrays[entry["name"]] = (
            np.frombuffer(payload[begin:end], dtype="<f8").reshape(shape).copy()
        )
    missing = {"weight", "bias", "m_weight", "m_bias", "v_weight", "v_bias"} - set(arrays)
    if missing:
        raise ConfigError(f"{path}: checkpoint missing arrays {sorted(missing)}")

    head = ToyHead(weight=arrays["weight"], bias=arrays["bias"])
    opt_state = AdamWState(
        m=[arrays["m_weight"], arrays["m_bias"]],
        v=[arrays["v_weight"], arrays["v_bias"]],
        step=int(header["optimizer"]["step"]),
    )
    return header["config"], head, opt_state, header


def ensure_compatible(ckpt_config, config, sections=("model", "data", "loss")):
    """Raise ConfigError naming the first key where the configs disagree."""
    for section in sections:
        a = ckpt_config.get(section, {})
        b = config.get(section, {})
        for key in sorted(set(a) | set(b)):
            if a.get(key) != b.get(key):
                raise ConfigError(
                    f"checkpoint/config mismatch at [{section}] {key}: "
                    f"checkpoint has {a.get(key)!r}, run has {b.get(key)!r}"
                )

"""Binary weights files.

Layout: magic "WFPV", u16 version, u32 header length, a UTF-8 JSON header
(model kind, config, seed, epoch, tensor names and shapes), the tensor
payload as little-endian float64 in header order, and a trailing CRC32 of
everything before it. Loading rebuilds the model from the stored config and
then overwrites its parameters, so a loaded model is structurally identical
to a freshly built one.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .datapipe import atomic_write_bytes
from .errors import WeightsFormatError, WeightsVersionError
from .models import ClassifierConfig, ModelGraph, UNetConfig, build_classifier, build_unet

MAGIC = b"WFPV"
VERSION = 1


def save_weights(model: ModelGraph, path) -> None:
    names = sorted(model.params)
    header = {
        "kind": model.kind,
        "config": asdict(model.config),
        "seed": model.seed,
        "epoch": model.epoch,
        "tensors": [{"name": n, "shape": list(model.params[n].data.shape)} for n in names],
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(hbytes)), hbytes]
    for n in names:
        parts.append(np.ascontiguousarray(model.params[n].data, dtype="<f8").tobytes())
    body = b"".join(parts)
    atomic_write_bytes(path, body + struct.pack("<I", zlib.crc32(body)))


def read_header(path) -> dict:
    """Parse and return just the JSON header of a weights file."""
    with open(path, "rb") as fh:
        blob = fh.read(10)
        if len(blob) < 10:
            raise WeightsFormatError(f"{path}: truncated weights file")
        if blob[:4] != MAGIC:
            raise WeightsFormatError(f"{path}: bad magic {blob[:4]!r}")
        (version,) = struct.unpack("<H", blob[4:6])
        if version != VERSION:
            raise WeightsVersionError(f"{path}: unsupported weights version {version}")
        (hlen,) = struct.unpack("<I", blob[6:10])
        hbytes = fh.read(hlen)
    if len(hbytes) != hlen:
        raise WeightsFormatError(f"{path}: truncated header")
    try:
        return json.loads(hbytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"{path}: corrupt header: {exc}") from exc


def load_weights(path) -> ModelGraph:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 14 or blob[:4] != MAGIC:
        raise WeightsFormatError(f"{path}: not a weights file")
    (version,) = struct.unpack("<H", blob[4:6])
    if version != VERSION:
        raise WeightsVersionError(f"{path}: unsupported weights version {version}")
    (stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored:
        raise WeightsFormatError(f"{path}: checksum mismatch (file corrupt or truncated)")
    (hlen,) = struct.unpack("<I", blob[6:10])
    if 10 + hlen > len(blob) - 4:
        raise WeightsFormatError(f"{path}: truncated header")
    try:
        header = json.loads(blob[10 : 10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"{path}: corrupt header: {exc}") from exc

    kind = header.get("kind")
    config = header.get("config", {})
    seed = int(header.get("seed", 0))
    if kind == "unet":
        model = build_unet(UNetConfig(**config), seed)
    elif kind in ("cnn", "residual"):
        model = build_classifier(ClassifierConfig(**config), seed)
    else:
        raise WeightsFormatError(f"{path}: unknown model kind {kind!r}")
    model.epoch = int(header.get("epoch", 0))

    offset = 10 + hlen
    for entry in header.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in model.params:
            raise WeightsFormatError(f"{path}: tensor {name!r} not in rebuilt model")
        if model.params[name].data.shape != shape:
            raise WeightsFormatError(
                f"{path}: tensor {name!r} shape {shape} != model shape "
                f"{model.params[name].data.shape}"
            )
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise WeightsFormatError(f"{path}: truncated tensor payload at {name!r}")
        model.params[name].data = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(
            np.float64
        )
        offset += nbytes
    if offset != len(blob) - 4:
        raise WeightsFormatError(f"{path}: trailing bytes after tensor payload")
    stored_names = {e["name"] for e in header.get("tensors", [])}
    if stored_names != set(model.params):
        raise WeightsFormatError(f"{path}: tensor set does not match model parameters")
    return model

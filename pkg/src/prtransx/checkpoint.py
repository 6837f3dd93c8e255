"""Binary checkpoint format.

Layout::

    b"PRTX1"                       magic
    uint32 LE                      header length n
    n bytes UTF-8 JSON header      variant, distance_norm, d, k, entity and
                                   relation counts, seeds, theta, the
                                   ordered tensor list with shapes, mask
                                   shape, payload SHA-256, config echo
    float64 LE arrays              tensors in TENSOR_ORDER, C order
    packed bits                    mask (little bit order), sparse variants only
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpointError, VariantMismatchError
from .models import ModelKind, ModelParams

MAGIC = b"PRTX1"
TENSOR_ORDER = ("entity", "relation", "normal", "matrix", "entity_proj", "relation_proj")


def _payload(params: ModelParams) -> bytes:
    chunks = [
        np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes()
        for name in TENSOR_ORDER
        if name in params.tensors
    ]
    if params.mask is not None:
        chunks.append(np.packbits(params.mask.ravel(), bitorder="little").tobytes())
    return b"".join(chunks)


def params_checksum(params: ModelParams) -> str:
    return hashlib.sha256(_payload(params)).hexdigest()


def write_checkpoint(path, params: ModelParams, config: dict):
    payload = _payload(params)
    header = {
        "format": 1,
        "variant": params.kind.variant,
        "distance_norm": params.kind.distance_norm,
        "d": params.d,
        "k": params.k,
        "entity_count": params.n_entities,
        "relation_count": params.n_relations,
        "seed": params.seed,
        "mask_seed": params.mask_seed,
        "theta": None if params.theta is None else np.asarray(params.theta).tolist(),
        "tensors": [[n, list(params.tensors[n].shape)] for n in TENSOR_ORDER if n in params.tensors],
        "mask_shape": None if params.mask is None else list(params.mask.shape),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "config": config,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(payload)
    tmp.replace(path)


def read_checkpoint(path, expected_variant=None) -> tuple[ModelParams, dict]:
    if expected_variant is not None:
        expected_variant = ModelKind(expected_variant).variant
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic, not a checkpoint")
    off = len(MAGIC)
    if len(data) < off + 4:
        raise CorruptCheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        header = json.loads(data[off: off + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc
    off += n
    try:
        params = _decode(path, header, data[off:], expected_variant)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed header ({exc!r})") from exc
    return params, header.get("config", {})


def _decode(path, header, payload, expected_variant) -> ModelParams:
    kind = ModelKind(header["variant"], header["distance_norm"])
    if expected_variant is not None and expected_variant != kind.variant:
        raise VariantMismatchError(f"{path}: checkpoint holds {kind.variant}, expected {expected_variant}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CorruptCheckpointError(f"{path}: payload checksum mismatch (truncated or damaged)")
    tensors = {}
    pos = 0
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) * 8
        tensors[name] = np.frombuffer(payload[pos: pos + size], dtype="<f8").reshape(shape).astype(np.float64)
        pos += size
    mask = None
    if header["mask_shape"] is not None:
        shape = header["mask_shape"]
        count = int(np.prod(shape))
        bits = np.frombuffer(payload[pos:], dtype=np.uint8)
        mask = np.unpackbits(bits, count=count, bitorder="little").astype(bool).reshape(shape)
        pos += (count + 7) // 8
    if pos != len(payload):
        raise CorruptCheckpointError(f"{path}: payload length does not match header")
    if tensors["entity"].shape != (header["entity_count"], header["d"]):
        raise CorruptCheckpointError(f"{path}: entity table dimension mismatch")
    theta = None if header["theta"] is None else np.asarray(header["theta"], dtype=float)
    params = ModelParams(kind, header["d"], header["k"], tensors, mask=mask, theta=theta,
                         seed=header["seed"], mask_seed=header["mask_seed"])
    return params

"""Binary model checkpoints.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"SPNT"
    4       1     layout version (currently 1)
    5       4     uint32 H, length of the JSON header
    9       H     UTF-8 JSON: model description, parameter names and shapes,
                  free-form metadata (e.g. standardization statistics)
    9+H     8*P   parameters as float64, in header order, C order each
    end-4   4     uint32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import Model, ModelSpec
from .util import atomic_write_bytes

__all__ = ["MAGIC", "VERSION", "dumps", "loads", "save", "load"]

MAGIC = b"SPNT"
VERSION = 1


def dumps(model: Model, meta=None) -> bytes:
    spec = model.spec
    header = {
        "model": {
            "input_shape": list(spec.input_shape),
            "layers": spec.describe(),
            "num_classes": spec.num_classes,
            "mode": spec.mode,
            "beta": spec.beta,
        },
        "params": [[name, list(arr.shape)] for name, arr in model.params.items()],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes()
                    for arr in model.params.values())
    blob = MAGIC + struct.pack("<BI", VERSION, len(head)) + head + body
    return blob + struct.pack("<I", zlib.crc32(blob))


def loads(blob: bytes):
    """Returns ``(model, meta)``."""
    if len(blob) < 13 or blob[:4] != MAGIC:
        raise FormatError("not a specnet checkpoint")
    version, hlen = struct.unpack("<BI", blob[4:9])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint layout version {version}")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != crc:
        raise FormatError("checkpoint checksum mismatch")
    header = json.loads(blob[9:9 + hlen].decode("utf-8"))
    m = header["model"]
    spec = ModelSpec.from_description(m["input_shape"], m["layers"], m["num_classes"],
                                      m["mode"], m["beta"])
    params, offset = {}, 9 + hlen
    for name, shape in header["params"]:
        count = int(np.prod(shape))
        params[name] = np.frombuffer(blob, dtype="<f8", count=count,
                                     offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(blob) - 4:
        raise FormatError("checkpoint payload length does not match its header")
    return Model(spec, params), header["meta"]


def save(path, model: Model, meta=None) -> None:
    atomic_write_bytes(path, dumps(model, meta))


def load(path):
    return loads(Path(path).read_bytes())

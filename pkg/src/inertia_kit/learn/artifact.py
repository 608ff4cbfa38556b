"""Self-describing binary container for model weights and checkpoints.

Layout::

    8 bytes   magic  b"IKMODEL\\0"
    u32 LE    format version
    u64 LE    header length in bytes
    header    UTF-8 JSON (sorted keys): metadata plus an index of arrays
              {name, shape, offset} into the blob
    blob      little-endian float64 values of all arrays, in index order
"""

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataio import NormalizationStats
from ..errors import FormatError
from .models import ModelConfig, build_model

MAGIC = b"IKMODEL\0"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def pack(meta: dict, arrays: dict) -> bytes:
    index, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_DTYPE)
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = dict(meta, arrays=index, byte_order="little", dtype="float64")
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hb)) + hb + b"".join(chunks)


def unpack(buf: bytes):
    if buf[:8] != MAGIC:
        raise FormatError("not a model container (bad magic)")
    version, n = struct.unpack("<IQ", buf[8:20])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {version}")
    header = json.loads(buf[20:20 + n])
    blob = memoryview(buf)[20 + n:]
    arrays = {}
    for entry in header.pop("arrays"):
        count = int(np.prod(entry["shape"], dtype=np.int64))
        a = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=entry["offset"])
        arrays[entry["name"]] = a.reshape(entry["shape"]).astype(np.float64)
    return header, arrays


def write_atomic(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def data_fingerprint(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=_DTYPE)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass
class ModelArtifact:
    config: ModelConfig
    norm: NormalizationStats
    weights: dict
    fingerprint: dict = field(default_factory=dict)

    def build(self):
        model = build_model(self.config)
        model.load_state_dict(self.weights)
        return model

    def to_bytes(self):
        meta = {
            "kind": "model",
            "model_config": self.config.to_dict(),
            "normalization": self.norm.to_dict(),
            "fingerprint": self.fingerprint,
        }
        return pack(meta, {f"w/{k}": v for k, v in self.weights.items()})

    @classmethod
    def from_bytes(cls, buf):
        meta, arrays = unpack(buf)
        if meta.get("kind") != "model":
            raise FormatError(f"expected a model container, got {meta.get('kind')!r}")
        return cls(
            config=ModelConfig.from_dict(meta["model_config"]),
            norm=NormalizationStats.from_dict(meta["normalization"]),
            weights={k[2:]: v for k, v in arrays.items() if k.startswith("w/")},
            fingerprint=meta.get("fingerprint", {}),
        )

    def save(self, path):
        write_atomic(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except FileNotFoundError:
            raise
        except (struct.error, ValueError, KeyError) as exc:
            raise FormatError(f"corrupt model file {path}: {exc}") from exc

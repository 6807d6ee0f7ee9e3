"""Binary checkpoint files ("PFCK").

Layout (little-endian)::

    b"PFCK"  u16 version  u32 count
    count x { u32 name_len, name (UTF-8), u32 rank, rank x u32 dim, f32 payload }
    u32 meta_len, meta (UTF-8 JSON, sorted keys)

Optimizer moments travel as ordinary entries named ``<param>.m1`` and
``<param>.m2``. Payloads are stored as f32, so a round trip is bit-exact for
f32 tensors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"PFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelCheckpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<HI", VERSION, len(self.tensors))]
        for name, arr in self.tensors.items():
            raw = name.encode("utf-8")
            arr = np.asarray(arr)
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<I", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        meta = json.dumps(self.metadata, sort_keys=True).encode("utf-8")
        parts.append(struct.pack("<I", len(meta)))
        parts.append(meta)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "ModelCheckpoint":
        if buf[:4] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        try:
            version, count = struct.unpack_from("<HI", buf, 4)
            if version != VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            pos = 10
            tensors: dict[str, np.ndarray] = {}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<I", buf, pos)
                pos += 4
                name = buf[pos : pos + nlen].decode("utf-8")
                pos += nlen
                (rank,) = struct.unpack_from("<I", buf, pos)
                pos += 4
                dims = struct.unpack_from(f"<{rank}I", buf, pos)
                pos += 4 * rank
                n = int(np.prod(dims)) if rank else 1
                if pos + 4 * n > len(buf):
                    raise CheckpointError(f"truncated payload for {name!r}")
                tensors[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).astype(np.float32).reshape(dims)
                pos += 4 * n
            (mlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if pos + mlen != len(buf):
                raise CheckpointError("trailing or missing bytes after metadata")
            metadata = json.loads(buf[pos : pos + mlen].decode("utf-8"))
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint: {exc}") from exc
        return cls(tensors, metadata)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def params(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.endswith((".m1", ".m2"))}


def pack(params: dict, optimizers: dict[str, AdamState] | None = None, metadata: dict | None = None) -> ModelCheckpoint:
    """Bundle parameter tensors and Adam states into a checkpoint.

    ``optimizers`` maps a label (e.g. "G", "D") to a state; its hyperparameters
    are recorded in metadata under ``optimizer.<label>``.
    """
    tensors: dict[str, np.ndarray] = {}
    meta = dict(metadata or {})
    for name, p in params.items():
        tensors[name] = np.asarray(getattr(p, "data", p), dtype=np.float32)
    for label, st in (optimizers or {}).items():
        meta[f"optimizer.{label}"] = st.hyperparameters()
        for name, m in st.first_moment.items():
            tensors[f"{name}.m1"] = np.asarray(m, dtype=np.float32)
        for name, v in st.second_moment.items():
            tensors[f"{name}.m2"] = np.asarray(v, dtype=np.float32)
    return ModelCheckpoint(tensors, meta)


def restore_optimizer(ckpt: ModelCheckpoint, label: str, names) -> AdamState:
    hp = dict(ckpt.metadata.get(f"optimizer.{label}", {}))
    st = AdamState(**hp) if hp else AdamState()
    for name in names:
        if f"{name}.m1" in ckpt.tensors:
            st.first_moment[name] = ckpt.tensors[f"{name}.m1"].copy()
            st.second_moment[name] = ckpt.tensors[f"{name}.m2"].copy()
    return st

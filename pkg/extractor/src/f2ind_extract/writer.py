"""Standalone F2EMB1 writer.

Mirrors the embedding interchange format consumed by the training side:
little-endian, 18-byte header (magic "F2EMB1", u32 count, u32 text dim, u32
image dim), then per sample u64 id, u8 label, u8 image flag, f32 text vector,
and f32 image vector only when the flag is set. Implemented independently so
the two packages share only the wire format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"F2EMB1"
_HEADER = struct.Struct("<6sIII")
_RECORD_HEAD = struct.Struct("<QBB")


@dataclass
class EmbeddedSample:
    sample_id: int
    label: int
    text_emb: np.ndarray  # float32 (text_dim,)
    image_emb: np.ndarray | None  # float32 (image_dim,) or None


def write_f2emb(samples: list[EmbeddedSample], text_dim: int, image_dim: int, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, len(samples), text_dim, image_dim))
        for s in samples:
            has_image = s.image_emb is not None
            if s.text_emb.shape != (text_dim,):
                raise ValueError(f"sample {s.sample_id}: text shape {s.text_emb.shape}")
            if has_image and s.image_emb.shape != (image_dim,):
                raise ValueError(f"sample {s.sample_id}: image shape {s.image_emb.shape}")
            fh.write(_RECORD_HEAD.pack(s.sample_id, s.label, 1 if has_image else 0))
            fh.write(np.ascontiguousarray(s.text_emb, dtype="<f4").tobytes())
            if has_image:
                fh.write(np.ascontiguousarray(s.image_emb, dtype="<f4").tobytes())

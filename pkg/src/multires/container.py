"""Binary container for extracted hidden states.

Layout (little-endian): magic "MRFT", u32 version, u32 state count, then per
state: u32 name length, utf-8 name, u32 resolution in ms, u64 rows, u64 cols,
row-major f32 values.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .model import TaggedState

FEATURES_MAGIC = b"MRFT"
FEATURES_VERSION = 1


def write_states(path: str, states: list[TaggedState]) -> None:
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC)
        fh.write(struct.pack("<II", FEATURES_VERSION, len(states)))
        for st in states:
            values = np.asarray(st.values, dtype="<f4")
            if values.ndim != 2:
                raise FormatError(f"state {st.name!r} must be 2-D, got shape {values.shape}")
            encoded = st.name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<IQQ", st.resolution_ms, values.shape[0], values.shape[1]))
            fh.write(values.tobytes())


def read_states(path: str) -> list[TaggedState]:
    states: list[TaggedState] = []
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURES_MAGIC:
            raise FormatError(f"{path}: not a feature container (magic {magic!r})")
        version, count = struct.unpack("<II", fh.read(8))
        if version != FEATURES_VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            res, rows, cols = struct.unpack("<IQQ", fh.read(20))
            payload = fh.read(rows * cols * 4)
            if len(payload) != rows * cols * 4:
                raise FormatError(f"{path}: truncated payload for state {name!r}")
            values = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()
            states.append(TaggedState(name, res, values))
    return states

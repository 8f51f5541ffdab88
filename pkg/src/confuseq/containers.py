"""Little-endian binary tensor containers used between pipeline stages.

Layout, common to all magics (CFQE epochs, CFQG gaze traces, CFQN CNN weights):

    magic      4 bytes
    version    u32 (currently 1)
    meta_len   u32, followed by meta_len bytes of UTF-8 JSON (sorted keys)
    n_arrays   u32
    per array: name_len u16 + UTF-8 name, dtype u8 (0=f32, 1=u8, 2=i64),
               ndim u32, dims u64 * ndim, then raw C-order data

All integers little-endian.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import CODE_LABELS, LABEL_CODES, EpochSet
from .errors import ParseError

MAGIC_EPOCHS = b"CFQE"
MAGIC_TRACES = b"CFQG"
MAGIC_CNN = b"CFQN"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1"), 2: np.dtype("<i8")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1, np.dtype("int64"): 2}


def write_container(path: str | Path, magic: bytes, meta: dict,
                    arrays: dict[str, np.ndarray]) -> None:
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_CODES:
                raise ValueError(f"unsupported container dtype {arr.dtype}")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", _DTYPE_CODES[arr.dtype]))
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_container(path: str | Path, expect_magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != expect_magic:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {expect_magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ParseError(f"{path}: unsupported container version {version}")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (n_arrays,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (code,) = struct.unpack("<B", fh.read(1))
            (ndim,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
            dtype = _DTYPES[code]
            count = int(np.prod(dims)) if ndim else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ParseError(f"{path}: truncated array {name!r}")
            arrays[name] = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    return meta, arrays


def write_epochs(path: str | Path, epochs: EpochSet) -> None:
    meta = {"sample_rate_hz": epochs.sample_rate_hz,
            "epoch_duration_s": epochs.epoch_duration_s,
            "channels": list(epochs.channels)}
    arrays = {
        "epochs": epochs.epochs.astype(np.float32, copy=False),
        "labels": np.array([LABEL_CODES[lab] for lab in epochs.labels], dtype=np.uint8),
        "trial_ids": np.array(epochs.trial_ids, dtype=np.int64),
    }
    write_container(path, MAGIC_EPOCHS, meta, arrays)


def read_epochs(path: str | Path) -> EpochSet:
    meta, arrays = read_container(path, MAGIC_EPOCHS)
    return EpochSet(
        epochs=arrays["epochs"],
        labels=tuple(CODE_LABELS[int(code)] for code in arrays["labels"]),
        sample_rate_hz=float(meta["sample_rate_hz"]),
        epoch_duration_s=float(meta["epoch_duration_s"]),
        channels=tuple(meta["channels"]),
        trial_ids=tuple(int(t) for t in arrays["trial_ids"]))


def write_traces(path: str | Path, traces: np.ndarray, trial_ids, labels) -> None:
    """traces: trials x 2 x length gaze traces (x, y rows)."""
    meta = {"trace_len": int(traces.shape[2]) if traces.size else 0}
    arrays = {
        "traces": traces.astype(np.float32, copy=False),
        "labels": np.array([LABEL_CODES[lab] for lab in labels], dtype=np.uint8),
        "trial_ids": np.array(trial_ids, dtype=np.int64),
    }
    write_container(path, MAGIC_TRACES, meta, arrays)


def read_traces(path: str | Path):
    _, arrays = read_container(path, MAGIC_TRACES)
    labels = tuple(CODE_LABELS[int(code)] for code in arrays["labels"])
    return arrays["traces"], tuple(int(t) for t in arrays["trial_ids"]), labels

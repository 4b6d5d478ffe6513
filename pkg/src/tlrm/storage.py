"""Binary file formats: checkpoints, datasets, plus CSV and PGM writers.

All binary formats are little-endian.

Checkpoint (``.tlrm``)::

    b"TLRM" | u32 version | str tag | str config | i64 seed | str meta-json
    | u32 n_tensors | n * (str name | u32 ndim | u32 shape[ndim] | f64 data)

where ``str`` is a u32 byte length followed by UTF-8 bytes.

Dataset ``PPC1``: b"PPC1" | u32 T | u32 n_neurons | u32 N, then per
trajectory f64 states (T, 2) followed by u16 counts (T, n_neurons).

Dataset ``BBL1``: b"BBL1" | u32 T | u32 res | u32 N, then f32 frames
(N, T, res, res).
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

CHECKPOINT_VERSION = 1


def _write_str(buf, text: str):
    data = text.encode("utf-8")
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def _read_exact(buf, n):
    data = buf.read(n)
    if len(data) != n:
        raise FormatError("unexpected end of file")
    return data


def _read_str(buf) -> str:
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    return _read_exact(buf, n).decode("utf-8")


@dataclass
class Checkpoint:
    tag: str
    tensors: dict
    config_text: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(b"TLRM")
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    _write_str(buf, ckpt.tag)
    _write_str(buf, ckpt.config_text)
    buf.write(struct.pack("<q", int(ckpt.seed)))
    _write_str(buf, json.dumps(ckpt.meta, sort_keys=True))
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name, value in ckpt.tensors.items():
        arr = np.array(value, dtype="<f8", order="C")   # keeps 0-d shapes
        _write_str(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    buf = io.BytesIO(data)
    if _read_exact(buf, 4) != b"TLRM":
        raise FormatError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(buf, 4))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    tag = _read_str(buf)
    config_text = _read_str(buf)
    (seed,) = struct.unpack("<q", _read_exact(buf, 8))
    meta = json.loads(_read_str(buf))
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    tensors = {}
    for _ in range(n):
        name = _read_str(buf)
        (ndim,) = struct.unpack("<I", _read_exact(buf, 4))
        shape = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8").astype(np.float64)
        tensors[name] = arr.reshape(shape)
    if buf.read(1):
        raise FormatError("trailing bytes after checkpoint")
    return Checkpoint(tag, tensors, config_text, seed, meta)


def save_checkpoint(path, ckpt: Checkpoint):
    Path(path).write_bytes(checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


# --- datasets -----------------------------------------------------------------

def write_ppc(path, states, counts):
    states = np.asarray(states, dtype="<f8")
    counts = np.asarray(counts)
    if states.ndim != 3 or states.shape[-1] != 2 or counts.shape[:2] != states.shape[:2]:
        raise FormatError("expected states (N, T, 2) and counts (N, T, n)")
    if counts.min(initial=0) < 0 or counts.max(initial=0) > np.iinfo(np.uint16).max:
        raise FormatError("counts do not fit in uint16")
    N, T, n = counts.shape
    with open(path, "wb") as f:
        f.write(b"PPC1")
        f.write(struct.pack("<III", T, n, N))
        for i in range(N):
            f.write(states[i].tobytes())
            f.write(counts[i].astype("<u2").tobytes())


def read_ppc(path):
    data = Path(path).read_bytes()
    if data[:4] != b"PPC1":
        raise FormatError(f"{path}: not a PPC1 file")
    T, n, N = struct.unpack("<III", data[4:16])
    per = T * 2 * 8 + T * n * 2
    if len(data) != 16 + N * per:
        raise FormatError(f"{path}: size does not match header")
    states = np.empty((N, T, 2))
    counts = np.empty((N, T, n), dtype=np.int64)
    off = 16
    for i in range(N):
        states[i] = np.frombuffer(data, "<f8", T * 2, off).reshape(T, 2)
        off += T * 2 * 8
        counts[i] = np.frombuffer(data, "<u2", T * n, off).reshape(T, n)
        off += T * n * 2
    return states, counts


def write_ppc_csv(path, states, counts):
    """One row per (trajectory, step): traj, t, position, velocity, counts..."""
    N, T, n = np.shape(counts)
    with open(path, "w") as f:
        f.write("traj,t,position,velocity," + ",".join(f"n{i}" for i in range(n)) + "\n")
        for i in range(N):
            for t in range(T):
                c = ",".join(str(int(x)) for x in counts[i, t])
                f.write(f"{i},{t},{states[i, t, 0]:.6e},{states[i, t, 1]:.6e},{c}\n")


def write_bbl(path, frames):
    """``frames`` is (N, T, res, res) or (N, T, res*res)."""
    f = np.asarray(frames)
    N, T = f.shape[:2]
    res = int(round(np.sqrt(np.prod(f.shape[2:]))))
    if res * res != int(np.prod(f.shape[2:])):
        raise FormatError("frames are not square")
    with open(path, "wb") as out:
        out.write(b"BBL1")
        out.write(struct.pack("<III", T, res, N))
        out.write(f.astype("<f4").tobytes())


def read_bbl(path):
    data = Path(path).read_bytes()
    if data[:4] != b"BBL1":
        raise FormatError(f"{path}: not a BBL1 file")
    T, res, N = struct.unpack("<III", data[4:16])
    if len(data) != 16 + N * T * res * res * 4:
        raise FormatError(f"{path}: size does not match header")
    return np.frombuffer(data, "<f4", offset=16).reshape(N, T, res, res).astype(np.float64)


def write_pgm(path, image):
    """Binary 8-bit PGM of an image with values in [0, 1]."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.round(img * 255).astype(np.uint8).tobytes())


def write_csv(path, header, rows):
    """Rows of mixed strings/numbers; numbers formatted ``%.6e``."""
    def fmt(x):
        if isinstance(x, str):
            return x
        if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
            return str(int(x))
        return "%.6e" % x
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(x) for x in row) + "\n")

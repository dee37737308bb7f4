"""I/Q dataset container, splits and batch iteration.

On-disk layout (all little-endian)::

    header       magic "IQDS0001" | version u32 | n_frames u64 | n_samples u32 | n_classes u32 | flags u32
    class table  n_classes x [len u16][utf-8 bytes]
    records      n_frames x [label u16][snr_centi_db i32][seed u64][I: n_samples f32][Q: n_samples f32]
    split table  (only if flags & FLAG_SPLIT) n_frames x u8, 0 = train, 1 = test

The tensor variant (``flags & FLAG_TENSOR``) written by the ``convert``
command adds a shape block ``[ndim u32][dims u32 ...]`` after the class table
and replaces each record's I/Q rows with a ``prod(dims)`` f32 payload.
"""

from __future__ import annotations

import hashlib
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .synth import NOISELESS_CENTI, SignalFrame
from .tensor import Tensor

MAGIC = b"IQDS0001"
VERSION = 1
HEADER = struct.Struct("<8sIQIII")
FLAG_SPLIT = 1
FLAG_TENSOR = 2

PathLike = Union[str, Path]


class ContainerError(ValueError):
    """Malformed or unreadable container file."""


class IqDataset:
    """Frames stored column-wise: ``payload[i]`` is frame ``i``'s 2xN matrix
    (or transformed tensor), with label, SNR (centi-dB) and seed arrays."""

    def __init__(self, payload, labels, snr_centi, seeds, class_names: Sequence[str],
                 split: Optional[np.ndarray] = None, n_samples: Optional[int] = None):
        self.payload = np.ascontiguousarray(payload, dtype=np.float32)
        n = self.payload.shape[0]
        self.labels = np.asarray(labels, dtype=np.int64).reshape(n)
        self.snr_centi = np.asarray(snr_centi, dtype=np.int64).reshape(n)
        self.seeds = np.asarray(seeds, dtype=np.uint64).reshape(n)
        self.class_names = list(class_names)
        self.split = None if split is None else np.asarray(split, dtype=np.uint8).reshape(n)
        self.n_samples = int(n_samples) if n_samples is not None else int(self.payload.shape[-1])
        if n and self.labels.max(initial=0) >= self.n_classes:
            raise ValueError(f"label {self.labels.max()} out of range for {self.n_classes} classes")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def is_tensor(self) -> bool:
        return self.payload.ndim != 3 or self.payload.shape[1] != 2 or self.payload.shape[2] != self.n_samples

    @property
    def frame_shape(self) -> Tuple[int, ...]:
        return tuple(self.payload.shape[1:])

    @property
    def snr_db(self) -> np.ndarray:
        out = self.snr_centi / 100.0
        out[self.snr_centi == NOISELESS_CENTI] = math.inf
        return out

    def __len__(self) -> int:
        return self.payload.shape[0]

    def __getitem__(self, i: int) -> SignalFrame:
        return SignalFrame(self.payload[i], int(self.labels[i]), float(self.snr_db[i]), int(self.seeds[i]))

    @property
    def frames(self) -> List[SignalFrame]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_frames(cls, frames: Sequence[SignalFrame], class_names: Sequence[str], n_samples: Optional[int] = None):
        if not frames:
            if n_samples is None:
                raise ValueError("n_samples is required for an empty dataset")
            return cls(np.zeros((0, 2, n_samples), np.float32), [], [], [], class_names)
        lens = {f.n_samples for f in frames}
        if len(lens) != 1 or (n_samples is not None and lens != {n_samples}):
            raise ValueError(f"frames have inconsistent lengths {sorted(lens)}")
        centi = [NOISELESS_CENTI if math.isinf(f.snr_db) else int(round(f.snr_db * 100)) for f in frames]
        return cls(np.stack([f.iq for f in frames]), [f.label for f in frames], centi, [f.seed for f in frames], class_names)

    def subset(self, idx) -> "IqDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return IqDataset(self.payload[idx], self.labels[idx], self.snr_centi[idx], self.seeds[idx],
                         self.class_names, None, self.n_samples)

    def train(self) -> "IqDataset":
        return self._part(0)

    def test(self) -> "IqDataset":
        return self._part(1)

    def _part(self, which: int) -> "IqDataset":
        if self.split is None:
            raise ValueError("dataset carries no train/test split")
        return self.subset(np.flatnonzero(self.split == which))

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        _write(self, buf)
        return buf.getvalue()

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, IqDataset):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __repr__(self):
        return f"IqDataset(n={len(self)}, frame_shape={self.frame_shape}, classes={self.class_names})"


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def _record_dtype(payload_size: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("snr", "<i4"), ("seed", "<u8"), ("payload", "<f4", (payload_size,))])


def _write(ds: IqDataset, fh) -> None:
    tensor = ds.is_tensor
    flags = (FLAG_SPLIT if ds.split is not None else 0) | (FLAG_TENSOR if tensor else 0)
    fh.write(HEADER.pack(MAGIC, VERSION, len(ds), ds.n_samples, ds.n_classes, flags))
    for name in ds.class_names:
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
    if tensor:
        dims = ds.frame_shape
        fh.write(struct.pack(f"<I{len(dims)}I", len(dims), *dims))
    size = int(np.prod(ds.frame_shape))
    rec = np.empty(len(ds), dtype=_record_dtype(size))
    rec["label"] = ds.labels
    rec["snr"] = ds.snr_centi
    rec["seed"] = ds.seeds
    rec["payload"] = ds.payload.reshape(len(ds), size)
    fh.write(rec.tobytes())
    if ds.split is not None:
        fh.write(ds.split.astype(np.uint8).tobytes())


def write_container(ds: IqDataset, path: PathLike) -> None:
    with open(path, "wb") as fh:
        _write(ds, fh)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise ContainerError(f"truncated container: need {n} bytes for {what} at byte offset {self.pos}, file has {len(self.raw)}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out


def read_container(path: PathLike) -> IqDataset:
    return from_bytes(Path(path).read_bytes())


def from_bytes(raw: bytes) -> IqDataset:
    r = _Reader(raw)
    magic, version, n_frames, n_samples, n_classes, flags = HEADER.unpack(r.take(HEADER.size, "header"))
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    names = []
    for _ in range(n_classes):
        (ln,) = struct.unpack("<H", r.take(2, "class name length"))
        names.append(r.take(ln, "class name").decode("utf-8"))
    if flags & FLAG_TENSOR:
        (ndim,) = struct.unpack("<I", r.take(4, "tensor rank"))
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim, "tensor dims"))
    else:
        dims = (2, n_samples)
    size = int(np.prod(dims))
    dt = _record_dtype(size)
    rec = np.frombuffer(r.take(dt.itemsize * n_frames, "frame records"), dtype=dt)
    split = None
    if flags & FLAG_SPLIT:
        split = np.frombuffer(r.take(n_frames, "split table"), dtype=np.uint8).copy()
    if r.pos != len(raw):
        raise ContainerError(f"{len(raw) - r.pos} trailing bytes after offset {r.pos}")
    payload = rec["payload"].reshape((n_frames, *dims)).copy()
    return IqDataset(payload, rec["label"], rec["snr"], rec["seed"], names, split, n_samples)


# ---------------------------------------------------------------------------
# splitting and batching
# ---------------------------------------------------------------------------


def split(ds: IqDataset, train_idx, test_idx) -> Tuple[IqDataset, IqDataset]:
    tr = np.asarray(train_idx, dtype=np.int64)
    te = np.asarray(test_idx, dtype=np.int64)
    for name, idx in (("train", tr), ("test", te)):
        if idx.size and (idx.min() < 0 or idx.max() >= len(ds)):
            raise IndexError(f"{name} index out of range for dataset of {len(ds)} frames")
    overlap = np.intersect1d(tr, te)
    if overlap.size:
        raise ValueError(f"train and test indices overlap: {overlap[:10].tolist()}")
    return ds.subset(tr), ds.subset(te)


def batches(ds: IqDataset, batch_size: int, shuffle_seed: Optional[int] = None
            ) -> Iterator[Tuple[Tensor, np.ndarray, np.ndarray]]:
    """Yield ``(x, labels, snr_db)``; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(ds))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(ds))
    snr = ds.snr_db
    for lo in range(0, len(ds), batch_size):
        idx = order[lo : lo + batch_size]
        yield Tensor(ds.payload[idx]), ds.labels[idx], snr[idx]

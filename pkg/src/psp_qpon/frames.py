"""Quadrature frames and their binary persistence format.

Samples are held as a complex array ``z = x + i p``; its memory layout is
exactly the interleaved little-endian ``(x, p)`` float64 pairs of the file
format, so reading and writing are zero-copy.

Record layout (little-endian)::

    magic     4s   b"QPON"
    version   u16
    role      u8   0 = QLT, i >= 1 = QNU i
    frame     u64
    kind      u8   0 = signal, 1 = shot-noise calibration
    rate      f64  sample rate in Hz
    n         u64
    samples   n * (f64 x, f64 p)
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np

from .errors import FrameFormatError, LengthMismatch

MAGIC = b"QPON"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBQBdQ")

QLT_ROLE = 0


class FrameKind(enum.IntEnum):
    SIGNAL = 0
    SHOT_NOISE = 1


@dataclass(frozen=True, eq=False)
class QuadratureFrame:
    """A block of quadrature samples in shot-noise units.

    ``role`` is 0 for the line terminal and ``i`` (1-based) for network unit i.
    ``snu_ref`` links to the calibration record used to normalize the frame.
    """

    role: int
    frame_index: int
    z: np.ndarray
    kind: FrameKind = FrameKind.SIGNAL
    sample_rate_hz: float = 4e9
    snu_ref: object | None = field(default=None)

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=np.complex128)
        if z.ndim != 1 or z.size == 0:
            raise ValueError("frame needs a non-empty 1-D sample array")
        if self.kind == FrameKind.SHOT_NOISE and self.snu_ref is not None:
            raise ValueError("calibration frames cannot carry an snu_ref")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "kind", FrameKind(self.kind))

    @classmethod
    def from_xp(cls, role, frame_index, x, p, **kw) -> "QuadratureFrame":
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        if x.shape != p.shape:
            raise LengthMismatch("x and p lengths differ")
        return cls(role, frame_index, x + 1j * p, **kw)

    def __len__(self) -> int:
        return self.z.size

    @property
    def x(self) -> np.ndarray:
        return self.z.real

    @property
    def p(self) -> np.ndarray:
        return self.z.imag

    @property
    def samples(self) -> np.ndarray:
        """``(n, 2)`` view of the ``(x, p)`` pairs."""
        return self.z.view(np.float64).reshape(-1, 2)

    def quadrature_variance(self) -> float:
        """Mean of the x and p sample variances."""
        zc = self.z - self.z.mean()
        return float(np.vdot(zc, zc).real / (2 * zc.size))

    def with_samples(self, z: np.ndarray, **changes) -> "QuadratureFrame":
        return replace(self, z=z, **changes)

    @property
    def is_qlt(self) -> bool:
        return self.role == QLT_ROLE


def check_equal_lengths(*frames: QuadratureFrame) -> int:
    sizes = {len(f) for f in frames}
    if len(sizes) != 1:
        raise LengthMismatch(f"frame lengths differ: {sorted(sizes)}")
    return sizes.pop()


def write_frame(fh: BinaryIO, frame: QuadratureFrame) -> None:
    fh.write(
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            frame.role,
            frame.frame_index,
            int(frame.kind),
            float(frame.sample_rate_hz),
            len(frame),
        )
    )
    fh.write(frame.z.astype("<c16", copy=False).tobytes())


def write_frames(path: str | Path, frames: Iterable[QuadratureFrame], append: bool = False) -> None:
    with open(path, "ab" if append else "wb") as fh:
        for frame in frames:
            write_frame(fh, frame)


def iter_frames(path: str | Path) -> Iterator[QuadratureFrame]:
    """Yield the records of a frame file one at a time."""
    with open(path, "rb") as fh:
        while True:
            head = fh.read(_HEADER.size)
            if not head:
                return
            if len(head) < _HEADER.size:
                raise FrameFormatError(f"{path}: truncated header")
            magic, version, role, index, kind, rate, n = _HEADER.unpack(head)
            if magic != MAGIC:
                raise FrameFormatError(f"{path}: bad magic {magic!r}")
            if version != FORMAT_VERSION:
                raise FrameFormatError(f"{path}: unsupported format version {version}")
            payload = fh.read(16 * n)
            if len(payload) < 16 * n:
                raise FrameFormatError(f"{path}: truncated samples in frame {index}")
            z = np.frombuffer(payload, dtype="<c16").astype(np.complex128)
            yield QuadratureFrame(role, index, z, FrameKind(kind), rate)


def read_frames(path: str | Path) -> list[QuadratureFrame]:
    return list(iter_frames(path))

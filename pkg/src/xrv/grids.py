"""Scalar-grid types and bit-exact binary I/O.

Axis convention: x runs patient left-right, y points into the patient
(the projection axis), z runs feet to head.  A ``Volume`` stores its
samples so that the flat index of voxel (x, y, z) is ``x + nx*(y + ny*z)``;
in numpy terms the array has shape (nz, ny, nx) in C order.  A
``ProjectionImage`` uses ``x + nx*z`` / shape (nz, nx).

On-disk containers (all little-endian):

    XRV1: magic "XRV1", nx ny nz as uint32, spacing x y z as float32,
          then nx*ny*nz float32 samples in flat-index order.
    XRI1: magic "XRI1", nx nz as uint32, spacing x z as float32,
          then nx*nz float32 samples.

In memory the grids hold float64; writing rounds to float32, so
``read(write(v)) == v`` holds exactly whenever the values are float32
representable (everything this package generates is), and
``write(read(stream))`` reproduces the stream byte for byte always.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class ValidationError(ValueError):
    """Invalid argument or grid content (bad dims, non-finite data, ...)."""


class FormatError(Exception):
    """Malformed container: bad magic or truncated payload."""


_MAGIC_VOLUME = b"XRV1"
_MAGIC_IMAGE = b"XRI1"


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values")


def _check_spacing(spacing, n):
    if len(spacing) != n:
        raise ValidationError(f"spacing must have {n} entries, got {len(spacing)}")
    for s in spacing:
        if not (np.isfinite(s) and s > 0):
            raise ValidationError(f"spacing entries must be finite and positive, got {spacing}")


@dataclass(frozen=True)
class Volume:
    """3-D scalar voxel grid with physical spacing in millimeters.

    ``data`` has shape (nz, ny, nx); ``spacing`` is (sx, sy, sz).
    Immutable after construction.
    """

    data: np.ndarray
    spacing: tuple

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C")
        if arr.ndim != 3:
            raise ValidationError(f"volume data must be 3-D, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ValidationError(f"volume dims must all be positive, got shape {arr.shape}")
        _check_finite(arr, "volume data")
        _check_spacing(self.spacing, 3)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def nx(self):
        return self.data.shape[2]

    @property
    def ny(self):
        return self.data.shape[1]

    @property
    def nz(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class ProjectionImage:
    """2-D scalar grid (an x-ray or scout); semantically the y-mean of a Volume.

    ``data`` has shape (nz, nx); ``spacing`` is (sx, sz).
    """

    data: np.ndarray
    spacing: tuple

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C")
        if arr.ndim != 2:
            raise ValidationError(f"image data must be 2-D, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ValidationError(f"image dims must all be positive, got shape {arr.shape}")
        _check_finite(arr, "image data")
        _check_spacing(self.spacing, 2)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def nx(self):
        return self.data.shape[1]

    @property
    def nz(self):
        return self.data.shape[0]


def _to_f32_bytes(arr):
    out = arr.astype("<f4")
    if not np.all(np.isfinite(out)):
        raise ValidationError("values overflow float32 on write")
    return out.tobytes()


def _read_exact(fp, n, what):
    buf = fp.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated stream: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def write_volume(v: Volume, fp) -> int:
    """Write ``v`` to a binary sink in XRV1 form; returns bytes written."""
    header = _MAGIC_VOLUME + struct.pack("<III", v.nx, v.ny, v.nz)
    header += struct.pack("<fff", *v.spacing)
    payload = _to_f32_bytes(v.data)
    fp.write(header)
    fp.write(payload)
    return len(header) + len(payload)


def read_volume(fp) -> Volume:
    """Read an XRV1 container from a binary stream."""
    magic = _read_exact(fp, 4, "magic")
    if magic != _MAGIC_VOLUME:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC_VOLUME!r}")
    nx, ny, nz = struct.unpack("<III", _read_exact(fp, 12, "dims"))
    if nx == 0 or ny == 0 or nz == 0:
        raise ValidationError(f"volume dims must be positive, got ({nx}, {ny}, {nz})")
    spacing = struct.unpack("<fff", _read_exact(fp, 12, "spacing"))
    n = nx * ny * nz
    raw = _read_exact(fp, 4 * n, "voxel payload")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(nz, ny, nx)
    return Volume(data=data, spacing=spacing)


def write_image(img: ProjectionImage, fp) -> int:
    """Write ``img`` to a binary sink in XRI1 form; returns bytes written."""
    header = _MAGIC_IMAGE + struct.pack("<II", img.nx, img.nz)
    header += struct.pack("<ff", *img.spacing)
    payload = _to_f32_bytes(img.data)
    fp.write(header)
    fp.write(payload)
    return len(header) + len(payload)


def read_image(fp) -> ProjectionImage:
    """Read an XRI1 container from a binary stream."""
    magic = _read_exact(fp, 4, "magic")
    if magic != _MAGIC_IMAGE:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC_IMAGE!r}")
    nx, nz = struct.unpack("<II", _read_exact(fp, 8, "dims"))
    if nx == 0 or nz == 0:
        raise ValidationError(f"image dims must be positive, got ({nx}, {nz})")
    spacing = struct.unpack("<ff", _read_exact(fp, 8, "spacing"))
    raw = _read_exact(fp, 4 * nx * nz, "pixel payload")
    data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(nz, nx)
    return ProjectionImage(data=data, spacing=spacing)


def write_pgm(img: ProjectionImage, lo: float, hi: float, fp) -> int:
    """Write a binary PGM (P5, maxval 255) rendering of ``img``.

    Pixels map by clamp((v - lo) / (hi - lo), 0, 1) * 255 rounded half-up;
    rows run z ascending, x ascending within each row.
    """
    if not lo < hi:
        raise ValidationError(f"require lo < hi, got lo={lo}, hi={hi}")
    t = np.clip((img.data - lo) / (hi - lo), 0.0, 1.0)
    pix = np.floor(t * 255.0 + 0.5).astype(np.uint8)
    header = b"P5\n%d %d\n255\n" % (img.nx, img.nz)
    fp.write(header)
    fp.write(pix.tobytes())
    return len(header) + pix.size

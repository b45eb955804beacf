"""Procedural ellipsoid phantoms standing in for a CT training corpus.

A phantom is a soft-tissue background plus ``n`` solid ellipsoids and one
low-intensity ellipsoidal cavity, composited last-writer-wins in
generation order.  Ellipsoid placement follows a fixed quasi-random
layout of anchor sites with per-phantom random jitter, so the i-th
"organ" occupies a consistent coordinate range across a corpus (the
property appearance-based retrieval relies on) while no two phantoms are
alike.  All intensities land in [0, 1000] and are quantized to float32
values, which makes generated volumes survive the on-disk float32
container bit-for-bit.

Everything is drawn from ``numpy.random.default_rng(seed)`` using only
uniform draws, so a (seed, dims, n) triple always yields the identical
volume.
"""

from __future__ import annotations

import numpy as np

from .grids import ValidationError, Volume

# Quasi-random anchor layout constants (R-sequence increments per axis).
_ALPHA = (0.8191725133961645, 0.6710436067037893, 0.5497004779019703)
_SIZE_ALPHA = 0.7548776662466927

_CENTER_LO, _CENTER_SPAN = 0.28, 0.44
_JITTER = 0.05
_SIZE_LO, _SIZE_SPAN = 0.08, 0.10


def _f32(x):
    # pin intensities to float32-representable values
    return float(np.float32(x))


def _frac(x):
    return x - np.floor(x)


def gen_phantom(seed: int, dims, n_ellipsoids: int) -> Volume:
    """Deterministic ellipsoid phantom of the given (nx, ny, nz) dims.

    Membership is the standard inequality sum(((p - c) / a)^2) <= 1 on the
    integer voxel grid; later shapes overwrite earlier ones and the cavity
    is drawn last.
    """
    nx, ny, nz = (int(d) for d in dims)
    if min(nx, ny, nz) < 8:
        raise ValidationError(f"phantom dims must each be >= 8, got {(nx, ny, nz)}")
    if n_ellipsoids < 1:
        raise ValidationError(f"need at least one ellipsoid, got {n_ellipsoids}")

    rng = np.random.default_rng(seed)
    dim_arr = np.array([nx, ny, nz], dtype=np.float64)

    background = _f32(rng.uniform(20.0, 80.0))
    data = np.full((nz, ny, nx), background)

    zz, yy, xx = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )

    def paint(center, semi, value):
        r2 = (
            ((xx - center[0]) / semi[0]) ** 2
            + ((yy - center[1]) / semi[1]) ** 2
            + ((zz - center[2]) / semi[2]) ** 2
        )
        data[r2 <= 1.0] = value

    for i in range(n_ellipsoids):
        anchor = _CENTER_LO + _CENTER_SPAN * _frac(0.5 + (i + 1) * np.array(_ALPHA))
        jitter = rng.uniform(-_JITTER, _JITTER, size=3)
        center = (anchor + jitter) * dim_arr
        size_base = _SIZE_LO + _SIZE_SPAN * _frac((i + 1) * _SIZE_ALPHA)
        semi = size_base * rng.uniform(0.9, 1.1, size=3) * dim_arr
        value = _f32(rng.uniform(200.0, 1000.0))
        paint(center, semi, value)

    cavity_center = (0.5 + rng.uniform(-_JITTER, _JITTER, size=3)) * dim_arr
    cavity_semi = rng.uniform(0.08, 0.16, size=3) * dim_arr
    cavity_value = _f32(rng.uniform(0.0, 15.0))
    paint(cavity_center, cavity_semi, cavity_value)

    return Volume(data=data, spacing=(1.0, 1.0, 1.0))

"""Forward model and synthetic degradation operators.

The forward model is a parallel-ray orthographic projection along y:
an x-ray pixel is the plain mean of the voxels behind it.  Synthetic
ground truth for depth-resolved reconstruction is made by block-mean
downsampling a volume along y; a scout is an in-plane block-mean
downsampling of a projection.  ``replicate_baseline`` is the exact
minimum-norm solution of the underdetermined projection constraint
(the reconstruction constant along y).
"""

from __future__ import annotations

import numpy as np

from .grids import ProjectionImage, ValidationError, Volume


def project_y(v: Volume) -> ProjectionImage:
    """Mean projection along y: out(x, z) = mean_y v(x, y, z)."""
    data = v.data.mean(axis=1)
    return ProjectionImage(data=data, spacing=(v.spacing[0], v.spacing[2]))


def downsample_y(v: Volume, factor: int) -> Volume:
    """Block-mean downsample along y by an integer factor.

    The factor must divide ny exactly; partial blocks are rejected so the
    result is an exact average of disjoint y-blocks.
    """
    factor = int(factor)
    if factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor}")
    if v.ny % factor != 0:
        raise ValidationError(f"factor {factor} does not divide ny={v.ny}")
    ny2 = v.ny // factor
    data = v.data.reshape(v.nz, ny2, factor, v.nx).mean(axis=2)
    sx, sy, sz = v.spacing
    return Volume(data=data, spacing=(sx, sy * factor, sz))


def simulate_scout(img: ProjectionImage, factor: int) -> ProjectionImage:
    """Block-mean downsample an image by ``factor`` in both x and z."""
    factor = int(factor)
    if factor < 1:
        raise ValidationError(f"factor must be >= 1, got {factor}")
    if img.nx % factor != 0 or img.nz % factor != 0:
        raise ValidationError(
            f"factor {factor} does not divide image dims ({img.nx}, {img.nz})"
        )
    nx2, nz2 = img.nx // factor, img.nz // factor
    data = img.data.reshape(nz2, factor, nx2, factor).mean(axis=(1, 3))
    sx, sz = img.spacing
    return ProjectionImage(data=data, spacing=(sx * factor, sz * factor))


def replicate_baseline(img: ProjectionImage, h: int) -> Volume:
    """Minimum-norm reconstruction: the image replicated over h y-slices.

    Exactly satisfies mean_y(out) = img, and among all solutions it has the
    least sum of squares.  The y spacing is a placeholder copy of the x
    spacing (a depth scale is not meaningful for this baseline).
    """
    h = int(h)
    if h < 1:
        raise ValidationError(f"h must be >= 1, got {h}")
    data = np.repeat(img.data[:, None, :], h, axis=1)
    sx, sz = img.spacing
    return Volume(data=data, spacing=(sx, sx, sz))

"""Training exemplars: patch extraction and exact nearest-neighbor retrieval.

Each exemplar pairs a contrast-normalized low-res projection patch (the
feature) with the corresponding block of the y-downsampled training volume
(the stack).  Retrieval is exact k-NN under squared Euclidean distance on
the features, with ties broken by insertion order; a linear scan keeps
that contract trivially and is plenty fast at the database sizes involved.

The database persists in the XRD1 container: magic "XRD1", the patch
geometry as uint32 (p, h, stride, k) and the normalization floor as
float32, a uint32 pair count, then per pair the source tag (volume id,
x0, z0 as uint32), mu and sigma as float32, the p*p feature and the
p*h*p stack as float32 (stack flat index x + p*(y + h*z)).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .forward import downsample_y, project_y
from .grids import FormatError, ValidationError, Volume

_MAGIC_DB = b"XRD1"


@dataclass(frozen=True)
class PatchSpec:
    """Patch-grid geometry and retrieval parameters.

    p: patch edge length in pixels (x and z).
    h: stack height, output voxels along y per x-ray pixel.
    stride: patch-grid step; overlap = p - stride.
    k: candidates retrieved per node.
    epsilon: contrast-normalization floor added to sigma.
    """

    p: int = 5
    h: int = 4
    stride: int = 4
    k: int = 8
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.p < 1:
            raise ValidationError(f"p must be >= 1, got {self.p}")
        if not 1 <= self.stride <= self.p:
            raise ValidationError(f"require 1 <= stride <= p, got stride={self.stride}, p={self.p}")
        if self.h < 1:
            raise ValidationError(f"h must be >= 1, got {self.h}")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")

    @property
    def overlap(self):
        return self.p - self.stride


@dataclass(frozen=True)
class PatchPair:
    """One training exemplar: normalized patch feature and its voxel stack.

    feature = (raw_patch - mu) / (sigma + epsilon), length p*p.
    stack is the (p, h, p)-shaped block of the h-high training target,
    normalized by the same (mu, sigma).  source identifies provenance as
    (volume id, x0, z0).
    """

    feature: np.ndarray
    mu: float
    sigma: float
    stack: np.ndarray
    source: tuple

    def __post_init__(self):
        feat = np.array(self.feature, dtype=np.float64, order="C").ravel()
        stack = np.array(self.stack, dtype=np.float64, order="C")
        if stack.ndim != 3:
            raise ValidationError(f"stack must be 3-D (z, y, x), got ndim={stack.ndim}")
        if not np.all(np.isfinite(feat)) or not np.all(np.isfinite(stack)):
            raise ValidationError("patch pair contains non-finite values")
        feat.flags.writeable = False
        stack.flags.writeable = False
        object.__setattr__(self, "feature", feat)
        object.__setattr__(self, "stack", stack)
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "source", tuple(int(t) for t in self.source))


@dataclass(frozen=True)
class PatchIndex:
    """Immutable exact-NN index over patch pairs.

    Pair ids are insertion ordinals into ``pairs``; the packed feature
    matrix is kept alongside for vectorized scans.
    """

    pairs: tuple
    spec: PatchSpec
    features: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.features.shape[1]

    def __len__(self):
        return len(self.pairs)


def window_origins(n: int, p: int, stride: int) -> list:
    """Window origins along one axis: stride steps plus a final flush window.

    The last window is pinned to n - p when the stride pattern would stop
    short, so every pixel is covered by at least one window.
    """
    if p > n:
        raise ValidationError(f"patch size {p} exceeds axis length {n}")
    origins = list(range(0, n - p + 1, stride))
    if origins[-1] != n - p:
        origins.append(n - p)
    return origins


def extract_pairs(v: Volume, spec: PatchSpec, volume_id: int = 0) -> list:
    """Extract (feature, stack) pairs from a training volume.

    The low-res side is project_y(v); the high-res side is
    downsample_y(v, ny/h).  Windows slide at ``spec.stride`` with a final
    flush-to-edge window per axis, raster order (z outer, x inner).
    """
    if v.ny % spec.h != 0:
        raise ValidationError(f"stack height {spec.h} does not divide ny={v.ny}")
    img = project_y(v)
    target = downsample_y(v, v.ny // spec.h)
    xs = window_origins(v.nx, spec.p, spec.stride)
    zs = window_origins(v.nz, spec.p, spec.stride)
    pairs = []
    for z0 in zs:
        for x0 in xs:
            raw = img.data[z0 : z0 + spec.p, x0 : x0 + spec.p]
            mu = float(raw.mean())
            sigma = float(raw.std())
            denom = sigma + spec.epsilon
            feature = ((raw - mu) / denom).ravel()
            stack = (target.data[z0 : z0 + spec.p, :, x0 : x0 + spec.p] - mu) / denom
            pairs.append(
                PatchPair(feature=feature, mu=mu, sigma=sigma, stack=stack,
                          source=(volume_id, x0, z0))
            )
    return pairs


def build_index(pairs, spec: PatchSpec = None) -> PatchIndex:
    """Pack pairs into an exact-NN index; pair ids follow insertion order."""
    pairs = tuple(pairs)
    if not pairs:
        raise ValidationError("cannot build an index from zero pairs")
    dim = pairs[0].feature.shape[0]
    for i, pr in enumerate(pairs):
        if pr.feature.shape[0] != dim:
            raise ValidationError(
                f"pair {i} feature has dim {pr.feature.shape[0]}, expected {dim}"
            )
    if spec is None:
        p = pairs[0].stack.shape[0]
        h = pairs[0].stack.shape[1]
        spec = PatchSpec(p=p, h=h, stride=p, k=1)
    if spec.p * spec.p != dim:
        raise ValidationError(f"spec p={spec.p} inconsistent with feature dim {dim}")
    features = np.ascontiguousarray(np.stack([pr.feature for pr in pairs]))
    features.flags.writeable = False
    return PatchIndex(pairs=pairs, spec=spec, features=features)


def query(index: PatchIndex, feature, k: int) -> list:
    """Exact k nearest pairs as (pair id, squared distance), ascending.

    Sorted by (distance, insertion ordinal); returns all pairs when k
    exceeds the index size.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    q = np.ascontiguousarray(feature, dtype=np.float64).ravel()
    if q.shape[0] != index.dim:
        raise ValidationError(f"query dim {q.shape[0]} != index dim {index.dim}")
    d2 = ((index.features - q) ** 2).sum(axis=1)
    order = np.argsort(d2, kind="stable")[: min(k, len(index))]
    return [(int(i), float(d2[i])) for i in order]


def write_index(index: PatchIndex, fp) -> int:
    """Write the index to a binary sink in XRD1 form; returns bytes written."""
    spec = index.spec
    out = [_MAGIC_DB, struct.pack("<IIII", spec.p, spec.h, spec.stride, spec.k)]
    out.append(struct.pack("<f", spec.epsilon))
    out.append(struct.pack("<I", len(index)))
    for pr in index.pairs:
        out.append(struct.pack("<III", *pr.source))
        out.append(struct.pack("<ff", pr.mu, pr.sigma))
        out.append(pr.feature.astype("<f4").tobytes())
        out.append(pr.stack.astype("<f4").tobytes())
    blob = b"".join(out)
    fp.write(blob)
    return len(blob)


def read_index(fp) -> PatchIndex:
    """Read an XRD1 container from a binary stream."""
    magic = fp.read(4)
    if len(magic) != 4 or magic != _MAGIC_DB:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC_DB!r}")

    def take(n, what):
        buf = fp.read(n)
        if len(buf) != n:
            raise FormatError(f"truncated stream: expected {n} bytes for {what}")
        return buf

    p, h, stride, k = struct.unpack("<IIII", take(16, "patch spec"))
    (epsilon,) = struct.unpack("<f", take(4, "epsilon"))
    spec = PatchSpec(p=p, h=h, stride=stride, k=k, epsilon=float(epsilon))
    (n_pairs,) = struct.unpack("<I", take(4, "pair count"))
    if n_pairs == 0:
        raise ValidationError("index container holds zero pairs")
    pairs = []
    for _ in range(n_pairs):
        source = struct.unpack("<III", take(12, "source tag"))
        mu, sigma = struct.unpack("<ff", take(8, "normalization"))
        feat = np.frombuffer(take(4 * p * p, "feature"), dtype="<f4").astype(np.float64)
        stack = np.frombuffer(take(4 * p * h * p, "stack"), dtype="<f4")
        stack = stack.astype(np.float64).reshape(p, h, p)
        pairs.append(PatchPair(feature=feat, mu=float(mu), sigma=float(sigma),
                               stack=stack, source=source))
    return build_index(pairs, spec)

"""Patch-grid MRF assembly, energy minimization, stitching, and modes.

A node per patch window carries up to k retrieved candidate stacks
(denormalized into the query patch's intensity frame); 4-neighbor edges
connect windows whose footprints overlap and charge the mean squared
disagreement on the shared voxels.  The energy of an assignment is

    E = sum_nodes unary + lambda * sum_edges pairwise

with unary the squared feature distance of the chosen candidate.  Both
solvers are deterministic: a one-pass raster greedy pass and iterated
conditional modes (ICM), whose sweeps never increase the energy.
Alternative reconstructions ("modes") come from ICM started at the
rank-j candidate everywhere, deduplicated and sorted by energy; lower
energy reads as higher probability under a Boltzmann weighting.

Stitching averages all selected stacks covering a voxel, and an optional
per-column additive correction afterwards makes the y-mean of the output
reproduce the input image exactly; that correction is the minimum-norm
one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .forward import project_y
from .grids import ProjectionImage, ValidationError, Volume
from .training import PatchIndex, query, window_origins


@dataclass(frozen=True)
class Overlap:
    """Shared footprint of two stacks, as slice bounds inside each."""

    a_x0: int
    a_x1: int
    a_z0: int
    a_z1: int
    b_x0: int
    b_x1: int
    b_z0: int
    b_z1: int

    def __post_init__(self):
        if (self.a_x1 - self.a_x0) != (self.b_x1 - self.b_x0) or (
            self.a_z1 - self.a_z0
        ) != (self.b_z1 - self.b_z0):
            raise ValidationError("overlap extents differ between the two stacks")
        if self.a_x1 <= self.a_x0 or self.a_z1 <= self.a_z0:
            raise ValidationError("overlap region is empty")


@dataclass(frozen=True)
class MRFNode:
    """One patch window: query normalization plus retrieved candidates."""

    x0: int
    z0: int
    mu: float
    sigma: float
    cand_ids: tuple
    unary: np.ndarray
    stacks: np.ndarray  # (n_candidates, p, h, p), denormalized


@dataclass(frozen=True)
class MRFEdge:
    """Overlap edge between nodes a < b with the precomputed cost table."""

    a: int
    b: int
    overlap: Overlap
    cost: np.ndarray  # (k_a, k_b) pairwise costs


@dataclass(frozen=True)
class MRFModel:
    nodes: tuple
    edges: tuple
    lam: float
    grid_shape: tuple  # (gx, gz)
    img_nx: int
    img_nz: int
    img_spacing: tuple
    p: int
    h: int


@dataclass(frozen=True)
class Labeling:
    """One candidate choice per node and the energy of that assignment."""

    labels: tuple
    energy: float


@dataclass(frozen=True)
class VoxelizationResult:
    """Ranked reconstructions with per-mode projection residuals."""

    modes: tuple  # ((Volume, energy), ...) energies non-decreasing
    diagnostics: tuple  # ((residual_before, residual_after), ...)
    config: dict = field(default_factory=dict)


def pairwise_cost(a: np.ndarray, b: np.ndarray, ov: Overlap) -> float:
    """Mean squared difference over the voxels both stacks claim.

    Covers the full stack depth and the overlapping x/z footprint;
    symmetric, non-negative, zero iff the stacks agree on the overlap.
    """
    da = a[ov.a_z0 : ov.a_z1, :, ov.a_x0 : ov.a_x1]
    db = b[ov.b_z0 : ov.b_z1, :, ov.b_x0 : ov.b_x1]
    diff = da - db
    return float(np.mean(diff * diff))


def _edge_cost_matrix(stacks_a, stacks_b, ov):
    A = stacks_a[:, ov.a_z0 : ov.a_z1, :, ov.a_x0 : ov.a_x1].reshape(len(stacks_a), -1)
    B = stacks_b[:, ov.b_z0 : ov.b_z1, :, ov.b_x0 : ov.b_x1].reshape(len(stacks_b), -1)
    d = A[:, None, :] - B[None, :, :]
    return (d * d).mean(axis=2)


def build_mrf(img: ProjectionImage, index: PatchIndex, lam: float = 1.0) -> MRFModel:
    """Lay out patch windows over ``img`` and attach retrieved candidates.

    Windows follow the same stride/flush-to-edge rule as training
    extraction.  Each node's patch is normalized with its own (mu, sigma)
    and candidate stacks are denormalized back into that frame:
    stack_out = stored_stack * (sigma + epsilon) + mu.
    """
    lam = float(lam)
    if not (np.isfinite(lam) and lam >= 0):
        raise ValidationError(f"lambda must be finite and >= 0, got {lam}")
    spec = index.spec
    p = spec.p
    if p > img.nx or p > img.nz:
        raise ValidationError(
            f"image ({img.nx}x{img.nz}) smaller than patch size {p}"
        )
    xs = window_origins(img.nx, p, spec.stride)
    zs = window_origins(img.nz, p, spec.stride)
    gx, gz = len(xs), len(zs)

    nodes = []
    for z0 in zs:
        for x0 in xs:
            raw = img.data[z0 : z0 + p, x0 : x0 + p]
            mu = float(raw.mean())
            sigma = float(raw.std())
            denom = sigma + spec.epsilon
            feature = (raw - mu) / denom
            hits = query(index, feature.ravel(), spec.k)
            cand_ids = tuple(pid for pid, _ in hits)
            unary = np.array([d2 for _, d2 in hits])
            stacks = np.stack([index.pairs[pid].stack * denom + mu for pid in cand_ids])
            nodes.append(
                MRFNode(x0=x0, z0=z0, mu=mu, sigma=sigma, cand_ids=cand_ids,
                        unary=unary, stacks=stacks)
            )

    edges = []
    for iz in range(gz):
        for ix in range(gx):
            i = iz * gx + ix
            if ix + 1 < gx and xs[ix + 1] < xs[ix] + p:
                j = i + 1
                cut = xs[ix + 1] - xs[ix]
                ov = Overlap(a_x0=cut, a_x1=p, a_z0=0, a_z1=p,
                             b_x0=0, b_x1=p - cut, b_z0=0, b_z1=p)
                cost = _edge_cost_matrix(nodes[i].stacks, nodes[j].stacks, ov)
                edges.append(MRFEdge(a=i, b=j, overlap=ov, cost=cost))
            if iz + 1 < gz and zs[iz + 1] < zs[iz] + p:
                j = i + gx
                cut = zs[iz + 1] - zs[iz]
                ov = Overlap(a_x0=0, a_x1=p, a_z0=cut, a_z1=p,
                             b_x0=0, b_x1=p, b_z0=0, b_z1=p - cut)
                cost = _edge_cost_matrix(nodes[i].stacks, nodes[j].stacks, ov)
                edges.append(MRFEdge(a=i, b=j, overlap=ov, cost=cost))

    return MRFModel(nodes=tuple(nodes), edges=tuple(edges), lam=lam,
                    grid_shape=(gx, gz), img_nx=img.nx, img_nz=img.nz,
                    img_spacing=img.spacing, p=p, h=spec.h)


def labeling_energy(model: MRFModel, labels) -> float:
    """Energy of an assignment, recomputed from the model tables."""
    labels = tuple(int(l) for l in labels)
    _check_labels(model, labels)
    e = 0.0
    for node, l in zip(model.nodes, labels):
        e += float(node.unary[l])
    for edge in model.edges:
        e += model.lam * float(edge.cost[labels[edge.a], labels[edge.b]])
    return e


def _check_labels(model, labels):
    if len(labels) != len(model.nodes):
        raise ValidationError(
            f"labeling has {len(labels)} entries for {len(model.nodes)} nodes"
        )
    for i, (node, l) in enumerate(zip(model.nodes, labels)):
        if not 0 <= l < len(node.unary):
            raise ValidationError(f"label {l} out of range at node {i}")


def _incident_edges(model):
    inc = [[] for _ in model.nodes]
    for edge in model.edges:
        inc[edge.a].append(edge)
        inc[edge.b].append(edge)
    return inc


def solve_greedy(model: MRFModel) -> Labeling:
    """One raster pass; each node minimizes against already-fixed neighbors.

    Nodes are visited z outer, x inner; ties pick the lower candidate
    ordinal, so the result is deterministic.
    """
    back = [[] for _ in model.nodes]
    for edge in model.edges:
        back[edge.b].append(edge)  # edge.a < edge.b, so a is already fixed
    labels = []
    for i, node in enumerate(model.nodes):
        local = node.unary.copy()
        for edge in back[i]:
            local = local + model.lam * edge.cost[labels[edge.a], :]
        labels.append(int(np.argmin(local)))
    labels = tuple(labels)
    return Labeling(labels=labels, energy=labeling_energy(model, labels))


def solve_icm(model: MRFModel, init: Labeling, max_sweeps: int = 50) -> Labeling:
    """Iterated conditional modes from ``init``.

    Raster sweeps re-pick each node's candidate against the current
    neighborhood until a sweep changes nothing or max_sweeps is reached;
    the energy never increases from sweep to sweep.
    """
    if max_sweeps < 1:
        raise ValidationError(f"max_sweeps must be >= 1, got {max_sweeps}")
    labels = [int(l) for l in init.labels]
    _check_labels(model, labels)
    inc = _incident_edges(model)
    for _ in range(max_sweeps):
        changed = False
        for i, node in enumerate(model.nodes):
            local = node.unary.copy()
            for edge in inc[i]:
                if edge.a == i:
                    local = local + model.lam * edge.cost[:, labels[edge.b]]
                else:
                    local = local + model.lam * edge.cost[labels[edge.a], :]
            pick = int(np.argmin(local))
            if pick != labels[i]:
                labels[i] = pick
                changed = True
        if not changed:
            break
    labels = tuple(labels)
    return Labeling(labels=labels, energy=labeling_energy(model, labels))


def enumerate_modes(model: MRFModel, n_modes: int, max_sweeps: int = 50) -> list:
    """Distinct ICM local minima, sorted by ascending energy.

    Seeds are the greedy solution plus, for j = 0..n_modes-1, the labeling
    assigning every node its rank-j candidate (clamped to the candidate
    count).  Each seed is refined by ICM; identical labelings are merged
    and at most n_modes survive the energy sort.
    """
    if n_modes < 1:
        raise ValidationError(f"n_modes must be >= 1, got {n_modes}")
    pool = [solve_icm(model, solve_greedy(model), max_sweeps)]
    for j in range(n_modes):
        seed = tuple(min(j, len(node.unary) - 1) for node in model.nodes)
        init = Labeling(labels=seed, energy=labeling_energy(model, seed))
        pool.append(solve_icm(model, init, max_sweeps))
    distinct = {}
    for lab in pool:
        distinct.setdefault(lab.labels, lab)
    ranked = sorted(distinct.values(), key=lambda lab: (lab.energy, lab.labels))
    return ranked[:n_modes]


def stitch(model: MRFModel, labeling: Labeling) -> Volume:
    """Blend the selected stacks into an (nx, h, nz) volume.

    Every voxel is the unweighted mean of all selected stacks covering it;
    the window layout guarantees full coverage.
    """
    _check_labels(model, labeling.labels)
    p, h = model.p, model.h
    acc = np.zeros((model.img_nz, h, model.img_nx))
    count = np.zeros((model.img_nz, 1, model.img_nx))
    for node, l in zip(model.nodes, labeling.labels):
        acc[node.z0 : node.z0 + p, :, node.x0 : node.x0 + p] += node.stacks[l]
        count[node.z0 : node.z0 + p, :, node.x0 : node.x0 + p] += 1.0
    sx, sz = model.img_spacing
    return Volume(data=acc / count, spacing=(sx, sx, sz))


def enforce_projection(v: Volume, img: ProjectionImage) -> Volume:
    """Shift each y-column so the volume's y-mean equals ``img`` exactly.

    out(x, y, z) = v(x, y, z) + (img(x, z) - mean_y v(x, ., z)); the unique
    minimum-norm additive correction achieving consistency.
    """
    if v.nx != img.nx or v.nz != img.nz:
        raise ValidationError(
            f"volume ({v.nx}x{v.nz}) does not match image ({img.nx}x{img.nz})"
        )
    corr = img.data - v.data.mean(axis=1)
    return Volume(data=v.data + corr[:, None, :], spacing=v.spacing)


def voxelize(img: ProjectionImage, index: PatchIndex, lam: float = 1.0,
             n_modes: int = 1, enforce: bool = True,
             max_sweeps: int = 50) -> VoxelizationResult:
    """End-to-end reconstruction: build the MRF, solve, stitch, correct.

    Returns the ranked modes with per-mode max projection residuals before
    and after enforcement (when enforcement is off the two coincide).
    Deterministic for fixed inputs.
    """
    model = build_mrf(img, index, lam)
    labelings = enumerate_modes(model, n_modes, max_sweeps)
    modes = []
    diagnostics = []
    for lab in labelings:
        vol = stitch(model, lab)
        before = float(np.max(np.abs(project_y(vol).data - img.data)))
        if enforce:
            vol = enforce_projection(vol, img)
            after = float(np.max(np.abs(project_y(vol).data - img.data)))
        else:
            after = before
        modes.append((vol, lab.energy))
        diagnostics.append((before, after))
    spec = index.spec
    config = {
        "lambda": lam,
        "n_modes": n_modes,
        "enforce": bool(enforce),
        "max_sweeps": max_sweeps,
        "p": spec.p,
        "h": spec.h,
        "stride": spec.stride,
        "k": spec.k,
        "epsilon": spec.epsilon,
    }
    return VoxelizationResult(modes=tuple(modes), diagnostics=tuple(diagnostics),
                              config=config)

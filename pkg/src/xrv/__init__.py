"""x-ray voxelization: depth-resolved volumes from a single projection image."""

from .grids import (
    FormatError,
    ProjectionImage,
    ValidationError,
    Volume,
    read_image,
    read_volume,
    write_image,
    write_pgm,
    write_volume,
)
from .forward import downsample_y, project_y, replicate_baseline, simulate_scout
from .training import (
    PatchIndex,
    PatchPair,
    PatchSpec,
    build_index,
    extract_pairs,
    query,
    read_index,
    write_index,
)
from .inference import (
    Labeling,
    MRFModel,
    Overlap,
    VoxelizationResult,
    build_mrf,
    enforce_projection,
    enumerate_modes,
    labeling_energy,
    pairwise_cost,
    solve_greedy,
    solve_icm,
    stitch,
    voxelize,
)
from .phantoms import gen_phantom
from .evaluate import StudyReport, StudyRow, psnr, resolution_study, rmse

__all__ = [
    "FormatError",
    "Labeling",
    "MRFModel",
    "Overlap",
    "PatchIndex",
    "PatchPair",
    "PatchSpec",
    "ProjectionImage",
    "StudyReport",
    "StudyRow",
    "ValidationError",
    "Volume",
    "VoxelizationResult",
    "build_index",
    "build_mrf",
    "downsample_y",
    "enforce_projection",
    "enumerate_modes",
    "extract_pairs",
    "gen_phantom",
    "labeling_energy",
    "pairwise_cost",
    "project_y",
    "psnr",
    "query",
    "read_image",
    "read_index",
    "read_volume",
    "replicate_baseline",
    "resolution_study",
    "rmse",
    "simulate_scout",
    "solve_greedy",
    "solve_icm",
    "stitch",
    "voxelize",
    "write_image",
    "write_index",
    "write_pgm",
    "write_volume",
]

__version__ = "0.1.0"
